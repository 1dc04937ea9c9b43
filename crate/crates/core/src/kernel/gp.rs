use nalgebra::DMatrix;
use rayon::prelude::*;

use super::kernel::{Kernel, Trajectory};
use crate::error::{DmftError, Result};
use crate::linalg;
use crate::rng::StreamKey;

/// Draws `x = L z` with `L Lᵀ = cov` from a fixed factorization.
#[derive(Clone, Debug)]
pub struct GpSampler {
    factor: Vec<f64>,
    dim: usize,
    jitter: f64,
}

impl GpSampler {
    pub fn new(cov: &DMatrix<f64>) -> Result<Self> {
        let (factor, jitter) = linalg::jittered_cholesky(cov)?;
        Ok(Self { factor, dim: cov.nrows(), jitter })
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Absolute diagonal jitter that was needed to factor the covariance.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// Draw number `index` of stream `key`, written into `out` (length `dim`).
    /// `scratch` must also have length `dim`.
    pub fn draw_into(&self, key: &StreamKey, index: u64, scratch: &mut [f64], out: &mut [f64]) {
        let n = self.dim;
        key.fill_normal(index, scratch);
        for i in 0..n {
            let row = &self.factor[i * n..i * n + i + 1];
            out[i] = row.iter().zip(&scratch[..=i]).map(|(l, z)| l * z).sum();
        }
    }

    pub fn draw(&self, key: &StreamKey, index: u64) -> Vec<f64> {
        let mut scratch = vec![0.0; self.dim];
        let mut out = vec![0.0; self.dim];
        self.draw_into(key, index, &mut scratch, &mut out);
        out
    }
}

/// Mean-zero Gaussian draws with covariance `cov` over its row index space.
///
/// Draw `n` uses its own counter-based stream, so the output is identical for
/// any number of worker threads.
pub fn gp_sample(cov: &Kernel, n_samples: usize, seed: u64) -> Result<Vec<Trajectory>> {
    if cov.values.nrows() != cov.values.ncols() || cov.row_samples != cov.col_samples {
        return Err(DmftError::ShapeMismatch("gp_sample needs a square kernel".into()));
    }
    if cov.symmetry_error() > 1e-10 {
        return Err(DmftError::ShapeMismatch(format!(
            "covariance '{}' is not symmetric (relative asymmetry {:e})",
            cov.name,
            cov.symmetry_error()
        )));
    }
    let sampler = GpSampler::new(&cov.values)?;
    let key = StreamKey::new(seed);
    let (p, t) = (cov.n_row_samples(), cov.n_steps());
    (0..n_samples as u64)
        .into_par_iter()
        .map(|i| Trajectory::from_flat(&sampler.draw(&key, i), p, t))
        .collect()
}
