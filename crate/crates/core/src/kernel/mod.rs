//! The `(sample, time)` index space and everything that lives on it.

mod gp;
mod grid;
pub mod io;
#[allow(clippy::module_inception)]
mod kernel;
mod metrics;
mod ntk;
mod predict;
mod samples;

pub use gp::{gp_sample, GpSampler};
pub use grid::TimeGrid;
pub use kernel::{Kernel, Trajectory};
pub use metrics::{alignment, matrix_alignment};
pub use ntk::{equal_time_blocks, ntk_assemble, ntk_assemble_with_bias};
pub use predict::{integrate_predictions, integrate_predictions_with_decay, LossKind};
pub use samples::{SampleSet, PSD_TOLERANCE};
