use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::grid::TimeGrid;
use super::kernel::Trajectory;
use crate::error::{DmftError, Result};

/// Per-sample training loss. The error signal is `Δ = −∂ℓ/∂f`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    /// `½ (f − y)²`
    #[default]
    Mse,
    /// `log(1 + e^{−y f})` with labels `y ∈ {−1, +1}`.
    Logistic,
}

impl LossKind {
    #[inline]
    pub fn error_signal(self, f: f64, y: f64) -> f64 {
        match self {
            LossKind::Mse => y - f,
            LossKind::Logistic => y / (1.0 + (y * f).exp()),
        }
    }

    #[inline]
    pub fn value(self, f: f64, y: f64) -> f64 {
        match self {
            LossKind::Mse => 0.5 * (f - y) * (f - y),
            LossKind::Logistic => {
                let m = -y * f;
                if m > 0.0 {
                    m + (-m).exp().ln_1p()
                } else {
                    m.exp().ln_1p()
                }
            }
        }
    }

    /// Mean loss over the train samples.
    pub fn mean(self, f: impl Iterator<Item = f64>, y: &DVector<f64>) -> f64 {
        let total: f64 = f.zip(y.iter()).map(|(f, &y)| self.value(f, y)).sum();
        total / y.len().max(1) as f64
    }
}

/// Forward-Euler prediction dynamics `f[k+1] = f[k] + dt·K(t_k,t_k)Δ[k]` from `f(0) = 0`.
///
/// Each `ntk_diag[k]` is `n × n` with the `P` train samples first; test rows
/// evolve through their train columns. Returns `(f, Δ)` where `f` covers all
/// `n` samples and `Δ` only the train samples.
pub fn integrate_predictions(
    ntk_diag: &[DMatrix<f64>],
    targets: &DVector<f64>,
    loss: LossKind,
    grid: &TimeGrid,
) -> Result<(Trajectory, Trajectory)> {
    integrate_predictions_with_decay(ntk_diag, targets, loss, grid, 0.0)
}

/// As [`integrate_predictions`] with the extra contraction `−decay·f` that weight
/// decay `λ` induces on a degree-`κ` homogeneous network (`decay = λκ`).
pub fn integrate_predictions_with_decay(
    ntk_diag: &[DMatrix<f64>],
    targets: &DVector<f64>,
    loss: LossKind,
    grid: &TimeGrid,
    decay: f64,
) -> Result<(Trajectory, Trajectory)> {
    let steps = grid.n_steps();
    if ntk_diag.len() != steps {
        return Err(DmftError::ShapeMismatch(format!(
            "{} NTK blocks for a grid of {} steps",
            ntk_diag.len(),
            steps
        )));
    }
    let p = targets.len();
    let n = ntk_diag[0].nrows();
    if n < p || ntk_diag.iter().any(|k| k.nrows() != n || k.ncols() != n) {
        return Err(DmftError::ShapeMismatch(format!(
            "NTK blocks must be square with at least {p} rows"
        )));
    }
    let dt = grid.dt();
    let mut f = Trajectory::zeros(n, steps);
    let mut delta = Trajectory::zeros(p, steps);
    let mut fk = DVector::<f64>::zeros(n);
    for k in 0..steps {
        let dk = DVector::from_fn(p, |mu, _| loss.error_signal(fk[mu], targets[mu]));
        f.values.set_column(k, &fk);
        delta.values.set_column(k, &dk);
        if k + 1 == steps {
            break;
        }
        let drive = ntk_diag[k].columns(0, p) * &dk;
        fk += dt * (drive - decay * &fk);
        if fk.iter().any(|v| !v.is_finite()) {
            return Err(DmftError::NonFiniteValue {
                context: format!("predictions at step {} (dt = {dt} may be too large)", k + 1),
            });
        }
    }
    Ok((f, delta))
}
