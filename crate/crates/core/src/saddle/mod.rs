//! Full nonlinear DMFT: Monte-Carlo field ensembles, response functions and
//! the damped alternating fixed-point loop.

mod config;
mod estimate;
mod fields;
mod representer;
mod solver;

pub use config::{DmftConfig, NoiseMode, LAZY_THRESHOLD};
pub use estimate::{estimate_kernels, LayerEstimate};
pub use fields::{propagate_jacobians, solve_fields, FieldEnsemble, LayerInputs};
pub use representer::{representer_check, RepresenterReport};
pub use solver::{dmft_solve, DmftSolver, DmftState, IterationDiagnostics};
