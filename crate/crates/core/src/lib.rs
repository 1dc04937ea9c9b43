//! Dynamical mean field theory for feature learning in wide multilayer
//! networks, with closed-form, approximate and finite-width reference solvers.

pub mod activation;
pub mod approx;
pub mod data;
pub mod error;
pub mod kernel;
pub mod linalg;
pub mod linear;
pub mod reference;
pub mod rng;
pub mod saddle;

pub use activation::Activation;
pub use error::{DmftError, Result};
pub use kernel::{Kernel, LossKind, SampleSet, TimeGrid, Trajectory};

/// Library version, recorded in experiment reports.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
