//! Config-driven experiment runner for the DMFT solvers.

pub mod config;
pub mod data;
pub mod run;

pub use config::{ExperimentConfig, Mode};
pub use data::{load_data, DataSpec, LoadError};
pub use run::{run, Outcome};
