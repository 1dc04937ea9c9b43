use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::solver::DmftState;
use crate::error::{DmftError, Result};

/// Comparison of the long-time predictor with kernel ridge regression on the final NTK.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RepresenterReport {
    pub ridge: f64,
    /// `k(x)ᵀ [K + λκ I]⁻¹ y` on the test samples.
    pub kernel_predictions: Vec<f64>,
    /// Predictor at the last grid point on the test samples.
    pub dmft_predictions: Vec<f64>,
    pub max_abs_deviation: f64,
    /// `max_abs_deviation / max |kernel prediction|`.
    pub max_relative_deviation: f64,
}

/// Kernel regression with the final-time NTK and ridge `λκ`, compared to the
/// state's final test predictions.
pub fn representer_check(state: &DmftState, targets: &DVector<f64>, lambda_wd: f64, kappa: f64) -> Result<RepresenterReport> {
    let p = state.n_train;
    if targets.len() != p {
        return Err(DmftError::ShapeMismatch(format!("{} targets for {p} train samples", targets.len())));
    }
    let ntk = state.ntk_diagonal().pop().expect("grid has at least one step");
    let n = ntk.nrows();
    let ridge = lambda_wd * kappa;
    let mut system: DMatrix<f64> = ntk.view((0, 0), (p, p)).into_owned();
    for i in 0..p {
        system[(i, i)] += ridge;
    }
    let lu = system.lu();
    let coef = lu
        .solve(targets)
        .ok_or_else(|| DmftError::SingularSystem("K + λκI is singular".into()))?;
    let cross = ntk.view((p, 0), (n - p, p));
    let kernel_predictions: Vec<f64> = (cross * &coef).iter().cloned().collect();
    let last = state.grid.n_steps() - 1;
    let dmft_predictions: Vec<f64> = (p..n).map(|mu| state.f.at(mu, last)).collect();
    let max_abs_deviation = kernel_predictions
        .iter()
        .zip(&dmft_predictions)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let scale = kernel_predictions.iter().map(|v| v.abs()).fold(0.0, f64::max);
    Ok(RepresenterReport {
        ridge,
        kernel_predictions,
        dmft_predictions,
        max_abs_deviation,
        max_relative_deviation: if scale > 0.0 { max_abs_deviation / scale } else { max_abs_deviation },
    })
}
