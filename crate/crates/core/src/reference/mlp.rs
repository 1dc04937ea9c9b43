use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::activation::Activation;
use crate::error::{DmftError, Result};
use crate::kernel::LossKind;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MlpConfig {
    pub width: usize,
    pub depth: usize,
    pub gamma0: f64,
    pub activation: Activation,
    pub use_bias: bool,
    pub lambda_wd: f64,
    pub loss: LossKind,
    pub seed: u64,
}

impl Default for MlpConfig {
    fn default() -> Self {
        Self {
            width: 1000,
            depth: 1,
            gamma0: 1.0,
            activation: Activation::Tanh,
            use_bias: false,
            lambda_wd: 0.0,
            loss: LossKind::Mse,
            seed: 0,
        }
    }
}

impl MlpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.depth == 0 {
            return Err(DmftError::InvalidConfig("width and depth must be positive".into()));
        }
        if !(self.gamma0 > 0.0 && self.gamma0.is_finite()) {
            return Err(DmftError::InvalidConfig(format!(
                "the finite-width network needs gamma0 > 0, got {}",
                self.gamma0
            )));
        }
        if !(self.lambda_wd >= 0.0) {
            return Err(DmftError::InvalidConfig("weight decay must be non-negative".into()));
        }
        Ok(())
    }
}

/// Preactivations `h^1..h^L` and their images, one column per sample.
#[derive(Clone, Debug)]
pub struct Forward {
    pub h: Vec<DMatrix<f64>>,
    pub phi: Vec<DMatrix<f64>>,
    pub f: DVector<f64>,
}

/// Fully connected network
/// `h^1 = W^0 x / √D`, `h^{l+1} = W^l φ(h^l) / √N`, `f = w·φ(h^L) / (γ₀ N)`
/// with standard Gaussian initialization.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub config: MlpConfig,
    pub input_dim: usize,
    /// `N x D`
    pub w0: DMatrix<f64>,
    /// `W^1..W^{L-1}`, each `N x N`.
    pub hidden: Vec<DMatrix<f64>>,
    pub readout: DVector<f64>,
    /// `b^1..b^L`; empty without biases.
    pub bias: Vec<DVector<f64>>,
}

impl Mlp {
    pub fn new(config: &MlpConfig, input_dim: usize) -> Result<Self> {
        config.validate()?;
        if input_dim == 0 {
            return Err(DmftError::ShapeMismatch("inputs have zero features".into()));
        }
        let n = config.width;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut gauss = |r: usize, c: usize| DMatrix::from_fn(r, c, |_, _| StandardNormal.sample(&mut rng));
        let w0 = gauss(n, input_dim);
        let hidden = (1..config.depth).map(|_| gauss(n, n)).collect();
        let readout = gauss(n, 1).column(0).into_owned();
        let bias = if config.use_bias { (0..config.depth).map(|_| gauss(n, 1).column(0).into_owned()).collect() } else { Vec::new() };
        Ok(Self { config: config.clone(), input_dim, w0, hidden, readout, bias })
    }

    pub fn width(&self) -> usize {
        self.config.width
    }

    pub fn depth(&self) -> usize {
        self.config.depth
    }

    /// Forward pass on `xt`, a `D x n` matrix of input columns.
    pub fn forward(&self, xt: &DMatrix<f64>) -> Result<Forward> {
        if xt.nrows() != self.input_dim {
            return Err(DmftError::ShapeMismatch(format!(
                "network expects {} features, got {}",
                self.input_dim,
                xt.nrows()
            )));
        }
        let act = self.config.activation;
        let sqrt_n = (self.width() as f64).sqrt();
        let mut h = Vec::with_capacity(self.depth());
        let mut phi: Vec<DMatrix<f64>> = Vec::with_capacity(self.depth());
        for l in 0..self.depth() {
            let mut pre = if l == 0 {
                &self.w0 * xt / (self.input_dim as f64).sqrt()
            } else {
                &self.hidden[l - 1] * &phi[l - 1] / sqrt_n
            };
            if let Some(b) = self.bias.get(l) {
                for mut col in pre.column_iter_mut() {
                    col += b;
                }
            }
            phi.push(pre.map(|v| act.eval(v)));
            h.push(pre);
        }
        let f = phi[self.depth() - 1].tr_mul(&self.readout) / (self.config.gamma0 * self.width() as f64);
        Ok(Forward { h, phi, f })
    }

    /// Backward fields `g^1..g^L` with `g^l = γ√N ∂f/∂h^l`.
    pub fn backward(&self, fw: &Forward) -> Vec<DMatrix<f64>> {
        let act = self.config.activation;
        let depth = self.depth();
        let sqrt_n = (self.width() as f64).sqrt();
        let mut g = vec![DMatrix::zeros(0, 0); depth];
        let mut top = fw.h[depth - 1].map(|v| act.deriv(v));
        for mut col in top.column_iter_mut() {
            col.component_mul_assign(&self.readout);
        }
        g[depth - 1] = top;
        for l in (0..depth - 1).rev() {
            let z = self.hidden[l].tr_mul(&g[l + 1]) / sqrt_n;
            g[l] = fw.h[l].map(|v| act.deriv(v)).component_mul(&z);
        }
        g
    }

    /// One gradient-flow Euler step of size `eta` on `θ' = γ² Σ_μ Δ_μ ∂f_μ/∂θ − λθ`.
    ///
    /// `delta` holds the error signal of the first `delta.len()` columns of `xt`.
    pub fn step(&mut self, xt: &DMatrix<f64>, fw: &Forward, g: &[DMatrix<f64>], delta: &DVector<f64>, eta: f64) {
        let p = delta.len();
        let depth = self.depth();
        let sqrt_n = (self.width() as f64).sqrt();
        let rate = self.config.gamma0 * eta;
        let shrink = 1.0 - eta * self.config.lambda_wd;
        let weighted = |m: &DMatrix<f64>| {
            let mut out = m.columns(0, p).into_owned();
            for (mut col, d) in out.column_iter_mut().zip(delta.iter()) {
                col *= *d;
            }
            out
        };
        let g_delta: Vec<DMatrix<f64>> = g.iter().map(weighted).collect();

        let d_readout = fw.phi[depth - 1].columns(0, p) * delta;
        let d_w0 = &g_delta[0] * xt.columns(0, p).transpose() / (self.input_dim as f64).sqrt();
        let d_hidden: Vec<DMatrix<f64>> =
            (1..depth).map(|l| &g_delta[l] * fw.phi[l - 1].columns(0, p).transpose() / sqrt_n).collect();
        let d_bias: Vec<DVector<f64>> = if self.bias.is_empty() {
            Vec::new()
        } else {
            g_delta.iter().map(|m| m.column_sum()).collect()
        };

        self.readout *= shrink;
        self.readout.axpy(rate, &d_readout, 1.0);
        self.w0 *= shrink;
        self.w0 += d_w0 * rate;
        for (w, d) in self.hidden.iter_mut().zip(d_hidden) {
            *w *= shrink;
            *w += d * rate;
        }
        for (b, d) in self.bias.iter_mut().zip(d_bias) {
            *b *= shrink;
            b.axpy(rate, &d, 1.0);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(depth: usize, use_bias: bool) -> (Mlp, DMatrix<f64>) {
        let cfg = MlpConfig { width: 7, depth, gamma0: 0.8, use_bias, seed: 4, ..MlpConfig::default() };
        let net = Mlp::new(&cfg, 3).unwrap();
        let xt = DMatrix::from_row_slice(3, 2, &[0.5, -1.0, 1.2, 0.3, -0.7, 0.9]);
        (net, xt)
    }

    #[test]
    fn forward_matches_explicit_sums() {
        let (net, xt) = small(2, true);
        let fw = net.forward(&xt).unwrap();
        let (n, d) = (7, 3);
        for mu in 0..2 {
            let h1: Vec<f64> = (0..n)
                .map(|i| (0..d).map(|j| net.w0[(i, j)] * xt[(j, mu)]).sum::<f64>() / (d as f64).sqrt() + net.bias[0][i])
                .collect();
            let h2: Vec<f64> = (0..n)
                .map(|i| {
                    (0..n).map(|j| net.hidden[0][(i, j)] * h1[j].tanh()).sum::<f64>() / (n as f64).sqrt() + net.bias[1][i]
                })
                .collect();
            let f: f64 = (0..n).map(|i| net.readout[i] * h2[i].tanh()).sum::<f64>() / (0.8 * n as f64);
            assert!((fw.h[1][(3, mu)] - h2[3]).abs() < 1e-12);
            assert!((fw.f[mu] - f).abs() < 1e-12);
        }
    }

    #[test]
    fn backward_fields_are_scaled_output_gradients() {
        for bias in [false, true] {
            let (net, xt) = small(3, bias);
            let fw = net.forward(&xt).unwrap();
            let g = net.backward(&fw);
            let scale = 0.8 * 7.0;
            let eps = 1e-6;
            let perturbed = |which: usize, i: usize, j: usize, s: f64| {
                let mut m = net.clone();
                match which {
                    0 => m.w0[(i, j)] += s,
                    1 => m.hidden[1][(i, j)] += s,
                    _ => m.bias[0][i] += s,
                }
                m.forward(&xt).unwrap().f
            };
            for (which, i, j) in [(0, 2, 1), (1, 5, 3), (2, 4, 0)] {
                if which == 2 && !bias {
                    continue;
                }
                let fd = (perturbed(which, i, j, eps) - perturbed(which, i, j, -eps)) / (2.0 * eps);
                for mu in 0..2 {
                    let analytic = match which {
                        0 => g[0][(i, mu)] * xt[(j, mu)] / 3f64.sqrt(),
                        1 => g[2][(i, mu)] * fw.phi[1][(j, mu)] / 7f64.sqrt(),
                        _ => g[0][(i, mu)],
                    } / scale;
                    assert!((fd[mu] - analytic).abs() < 1e-8, "param {which}: {} vs {analytic}", fd[mu]);
                }
            }
        }
    }

    #[test]
    fn decay_without_error_shrinks_every_weight() {
        let mut cfg = MlpConfig { width: 5, depth: 2, lambda_wd: 0.5, use_bias: true, ..MlpConfig::default() };
        cfg.seed = 2;
        let mut net = Mlp::new(&cfg, 2).unwrap();
        let before = net.clone();
        let xt = DMatrix::from_element(2, 1, 1.0);
        let fw = net.forward(&xt).unwrap();
        let g = net.backward(&fw);
        net.step(&xt, &fw, &g, &DVector::zeros(1), 0.1);
        assert!((&net.w0 - &before.w0 * 0.95).abs().max() < 1e-15);
        assert!((&net.hidden[0] - &before.hidden[0] * 0.95).abs().max() < 1e-15);
        assert!((&net.readout - &before.readout * 0.95).abs().max() < 1e-15);
        assert!((&net.bias[1] - &before.bias[1] * 0.95).abs().max() < 1e-15);
    }

    #[test]
    fn rejects_lazy_coupling_and_wrong_inputs() {
        let cfg = MlpConfig { gamma0: 0.0, ..MlpConfig::default() };
        assert!(Mlp::new(&cfg, 2).is_err());
        let (net, _) = small(1, false);
        assert!(net.forward(&DMatrix::zeros(2, 1)).is_err());
    }
}
