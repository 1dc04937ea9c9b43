use serde::{Deserialize, Serialize};

use crate::activation::Activation;
use crate::error::{DmftError, Result};
use crate::kernel::LossKind;

/// Below this feature-learning strength the solver returns the lazy kernels directly.
pub const LAZY_THRESHOLD: f64 = 1e-8;

/// How Gaussian sources are drawn across outer iterations.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseMode {
    /// The same standard-normal draws every iteration (common random numbers).
    /// The fixed-point map is then deterministic and converges below the MC noise floor.
    #[default]
    Frozen,
    /// Independent draws every iteration.
    Fresh,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DmftConfig {
    pub depth: usize,
    pub gamma0: f64,
    pub activation: Activation,
    pub n_mc: usize,
    pub beta: f64,
    pub tol: f64,
    pub max_iters: usize,
    pub seed: u64,
    pub lambda_wd: f64,
    pub use_bias: bool,
    pub loss: LossKind,
    pub noise: NoiseMode,
    /// Gauss–Hermite nodes per dimension for the static initial guess.
    pub n_quad: usize,
    /// When positive, solve on the first `horizon_chunk` steps, then grow the
    /// horizon by that many steps at a time, starting each stage from the
    /// previous solution. Zero solves the whole grid at once.
    pub horizon_chunk: usize,
}

impl Default for DmftConfig {
    fn default() -> Self {
        Self {
            depth: 1,
            gamma0: 1.0,
            activation: Activation::Tanh,
            n_mc: 2000,
            beta: 0.6,
            tol: 1e-3,
            max_iters: 50,
            seed: 0,
            lambda_wd: 0.0,
            use_bias: false,
            loss: LossKind::Mse,
            noise: NoiseMode::Frozen,
            n_quad: crate::approx::DEFAULT_QUADRATURE_NODES,
            horizon_chunk: 0,
        }
    }
}

impl DmftConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(DmftError::InvalidConfig(msg));
        if self.depth == 0 {
            return bad("depth must be at least 1".into());
        }
        if !(self.gamma0 >= 0.0 && self.gamma0.is_finite()) {
            return bad(format!("gamma0 must be a non-negative number, got {}", self.gamma0));
        }
        if !(self.beta > 0.0 && self.beta <= 1.0) {
            return bad(format!("damping beta must lie in (0, 1], got {}", self.beta));
        }
        if !(self.tol > 0.0) {
            return bad(format!("tol must be positive, got {}", self.tol));
        }
        if self.max_iters == 0 {
            return bad("max_iters must be at least 1".into());
        }
        if !(self.lambda_wd >= 0.0 && self.lambda_wd.is_finite()) {
            return bad(format!("lambda_wd must be non-negative, got {}", self.lambda_wd));
        }
        if self.lambda_wd > 0.0 && self.decay_rate().is_none() {
            return bad(format!(
                "weight decay needs a homogeneous network; {} with use_bias={} is not",
                self.activation, self.use_bias
            ));
        }
        if self.n_quad == 0 {
            return bad("n_quad must be positive".into());
        }
        Ok(())
    }

    #[inline]
    pub fn is_lazy(&self) -> bool {
        self.gamma0 < LAZY_THRESHOLD
    }

    /// `λκ`, the contraction rate weight decay induces on the predictor, or
    /// `None` when the network is not homogeneous in its parameters.
    pub fn decay_rate(&self) -> Option<f64> {
        if self.lambda_wd == 0.0 {
            return Some(0.0);
        }
        if self.use_bias {
            return None;
        }
        self.activation.network_degree(self.depth).map(|kappa| self.lambda_wd * kappa)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        DmftConfig::default().validate().unwrap();
    }

    #[test]
    fn rejects_out_of_range_damping() {
        let cfg = DmftConfig { beta: 0.0, ..Default::default() };
        assert!(cfg.validate().is_err());
        let cfg = DmftConfig { beta: 1.5, ..Default::default() };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn weight_decay_needs_homogeneity() {
        let tanh = DmftConfig { lambda_wd: 1.0, ..Default::default() };
        assert!(tanh.validate().is_err());
        let relu = DmftConfig { lambda_wd: 1.0, activation: Activation::Relu, depth: 2, ..Default::default() };
        relu.validate().unwrap();
        assert_eq!(relu.decay_rate(), Some(3.0));
        let biased = DmftConfig { use_bias: true, ..relu };
        assert!(biased.validate().is_err());
    }

    #[test]
    fn json_fields_default_individually() {
        let cfg: DmftConfig = serde_json::from_str(r#"{"depth": 3, "activation": "relu"}"#).unwrap();
        assert_eq!(cfg.depth, 3);
        assert_eq!(cfg.activation, Activation::Relu);
        assert_eq!(cfg.n_mc, 2000);
        assert!(serde_json::from_str::<DmftConfig>(r#"{"dept": 3}"#).is_err());
    }
}
