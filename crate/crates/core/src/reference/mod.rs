//! Finite-width multilayer perceptrons trained by full-batch gradient descent
//! in the mean-field parameterization, and their empirical kernels.

mod measure;
mod mlp;
mod train;

pub use measure::{measure_kernels, EmpiricalKernels};
pub use mlp::{Forward, Mlp, MlpConfig};
pub use train::{train, ActivationLog, LossRecord, TrainLog, TrainOptions};
