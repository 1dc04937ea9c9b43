//! Synthetic regression tasks and input whitening.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{DmftError, Result};
use crate::kernel::SampleSet;
use crate::linalg;

/// How synthetic targets are produced from the inputs.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "rule", content = "values")]
pub enum TargetRule {
    /// `y = βᵀx / √D` with a Gaussian teacher β.
    #[default]
    Linear,
    /// `y = sign(βᵀx)`.
    Sign,
    /// Targets given verbatim, one per train sample.
    Explicit(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub n_train: usize,
    pub n_test: usize,
    pub dim: usize,
    pub seed: u64,
    pub target: TargetRule,
    /// Rotate the inputs so that the full input gram is the identity.
    pub whiten: bool,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self { n_train: 10, n_test: 0, dim: 50, seed: 0, target: TargetRule::Linear, whiten: false }
    }
}

/// Gaussian inputs (one row per sample, train rows first) with teacher targets.
pub fn synthetic(spec: &SyntheticSpec) -> Result<SampleSet> {
    if spec.n_train == 0 || spec.dim == 0 {
        return Err(DmftError::InvalidConfig("synthetic data needs n_train > 0 and dim > 0".into()));
    }
    let n = spec.n_train + spec.n_test;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut x = DMatrix::from_fn(n, spec.dim, |_, _| StandardNormal.sample(&mut rng));
    if spec.whiten {
        x = whiten(&x)?;
    }
    let beta = DVector::from_fn(spec.dim, |_, _| StandardNormal.sample(&mut rng));
    let train = x.rows(0, spec.n_train);
    let y = match &spec.target {
        TargetRule::Linear => train * &beta / (spec.dim as f64).sqrt(),
        TargetRule::Sign => (train * &beta).map(|v| if v >= 0.0 { 1.0 } else { -1.0 }),
        TargetRule::Explicit(v) => {
            if v.len() != spec.n_train {
                return Err(DmftError::ShapeMismatch(format!(
                    "{} explicit targets for {} train samples",
                    v.len(),
                    spec.n_train
                )));
            }
            DVector::from_column_slice(v)
        }
    };
    SampleSet::from_inputs(x, spec.n_train, y)
}

/// `K^{-1/2} X`, so that the returned rows have gram `X Xᵀ / D = I`.
pub fn whiten(x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (n, d) = x.shape();
    if d < n {
        return Err(DmftError::ShapeMismatch(format!("cannot whiten {n} samples in {d} dimensions")));
    }
    let mut gram = x * x.transpose() / d as f64;
    linalg::symmetrize(&mut gram);
    let eig = gram.symmetric_eigen();
    let top = eig.eigenvalues.max();
    if eig.eigenvalues.min() <= 1e-12 * top.max(1.0) {
        return Err(DmftError::SingularSystem("input gram is rank deficient; whitening undefined".into()));
    }
    let inv_sqrt = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l.sqrt()));
    let root = &eig.eigenvectors * inv_sqrt * eig.eigenvectors.transpose();
    Ok(root * x)
}
