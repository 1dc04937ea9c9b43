//! Deep linear networks: closed-form saddle-point equations and the two-layer ODEs.

mod closed_form;
mod two_layer;

pub use closed_form::{linear_solve, resolvent_residual, LinearConfig, LinearDmftState};
pub(crate) use closed_form::expand_over_samples;
pub use two_layer::{two_layer_general, two_layer_whitened, TwoLayerTrajectory, WhitenedTrajectory};
