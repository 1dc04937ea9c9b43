use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::mlp::Mlp;
use crate::error::{ensure_finite, DmftError, Result};
use crate::kernel::{SampleSet, TimeGrid, Trajectory};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainOptions {
    /// Gradient steps per grid interval; the learning rate is `η₀ = dt / steps_per_interval`.
    pub steps_per_interval: usize,
    /// Keep `φ(h^l)` and `g^l` at every grid point for kernel measurement.
    pub log_activations: bool,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self { steps_per_interval: 1, log_activations: true }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: usize,
    pub t: f64,
    pub loss: f64,
}

/// Columns of an `N x (n T)` matrix are sample-major: `mu * T + k`.
#[derive(Clone, Debug)]
pub struct ActivationLog {
    /// `φ(h^l)` for `l = 1..=L`.
    pub phi: Vec<DMatrix<f64>>,
    /// `g^l` for `l = 1..=L`.
    pub g: Vec<DMatrix<f64>>,
}

#[derive(Clone, Debug)]
pub struct TrainLog {
    pub grid: TimeGrid,
    pub eta0: f64,
    pub steps_per_interval: usize,
    pub width: usize,
    pub depth: usize,
    pub use_bias: bool,
    pub n_train: usize,
    pub input_gram: DMatrix<f64>,
    /// Mean train loss after every gradient step, starting at step 0.
    pub loss: Vec<LossRecord>,
    /// Predictions on all samples at the grid points.
    pub f: Trajectory,
    pub activations: Option<ActivationLog>,
}

impl TrainLog {
    /// Mean train loss at the grid points.
    pub fn loss_curve(&self) -> Vec<f64> {
        self.loss.iter().step_by(self.steps_per_interval).map(|r| r.loss).collect()
    }
}

/// Full-batch gradient descent aligned with `grid`: grid point `k` is reached
/// after `k * steps_per_interval` steps of size `η₀ = dt / steps_per_interval`.
pub fn train(net: &mut Mlp, data: &SampleSet, grid: TimeGrid, opts: TrainOptions) -> Result<TrainLog> {
    if opts.steps_per_interval == 0 {
        return Err(DmftError::InvalidConfig("steps_per_interval must be positive".into()));
    }
    let xt = data.inputs_or_factor()?.transpose();
    let n = data.n_total();
    let p = data.n_train();
    let t = grid.n_steps();
    let width = net.width();
    let depth = net.depth();
    let y = data.targets();
    let loss_kind = net.config.loss;
    let eta0 = grid.dt() / opts.steps_per_interval as f64;

    let mut f = DMatrix::zeros(n, t);
    let mut acts = opts.log_activations.then(|| ActivationLog {
        phi: vec![DMatrix::zeros(width, n * t); depth],
        g: vec![DMatrix::zeros(width, n * t); depth],
    });
    let mut loss = Vec::new();
    let total_steps = (t - 1) * opts.steps_per_interval;
    for step in 0..=total_steps {
        let fw = net.forward(&xt)?;
        ensure_finite(fw.f.as_slice(), || format!("network output at step {step}"))?;
        let train_loss = loss_kind.mean(fw.f.rows(0, p).iter().cloned(), y);
        loss.push(LossRecord { step, t: step as f64 * eta0, loss: train_loss });
        let g = net.backward(&fw);
        if step % opts.steps_per_interval == 0 {
            let k = step / opts.steps_per_interval;
            f.set_column(k, &fw.f);
            if let Some(a) = acts.as_mut() {
                for l in 0..depth {
                    for mu in 0..n {
                        a.phi[l].set_column(mu * t + k, &fw.phi[l].column(mu));
                        a.g[l].set_column(mu * t + k, &g[l].column(mu));
                    }
                }
            }
        }
        if step == total_steps {
            break;
        }
        let delta = DVector::from_fn(p, |mu, _| loss_kind.error_signal(fw.f[mu], y[mu]));
        net.step(&xt, &fw, &g, &delta, eta0);
    }
    Ok(TrainLog {
        grid,
        eta0,
        steps_per_interval: opts.steps_per_interval,
        width,
        depth,
        use_bias: net.config.use_bias,
        n_train: p,
        input_gram: data.input_gram().clone(),
        loss,
        f: Trajectory::from_matrix(f),
        activations: acts,
    })
}
