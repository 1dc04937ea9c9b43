use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{DmftError, Result};

/// Variances below this are treated as exactly zero.
pub const DETERMINISTIC_VARIANCE: f64 = 1e-14;

/// Gauss–Hermite rule for expectations over a standard normal variable:
/// `E[f(x)] ≈ Σ_i w_i f(x_i)` with `Σ_i w_i = 1`.
#[derive(Clone, Debug)]
pub struct GaussHermite {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussHermite {
    /// Golub–Welsch: eigen-decomposition of the Jacobi matrix of the
    /// probabilists' Hermite polynomials.
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "quadrature needs at least one node");
        let jacobi = DMatrix::from_fn(n, n, |i, j| {
            if i + 1 == j {
                (j as f64).sqrt()
            } else if j + 1 == i {
                (i as f64).sqrt()
            } else {
                0.0
            }
        });
        let eig = SymmetricEigen::new(jacobi);
        let mut pairs: Vec<(f64, f64)> = (0..n)
            .map(|k| (eig.eigenvalues[k], eig.eigenvectors[(0, k)].powi(2)))
            .collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let total: f64 = pairs.iter().map(|p| p.1).sum();
        Self {
            nodes: pairs.iter().map(|p| p.0).collect(),
            weights: pairs.iter().map(|p| p.1 / total).collect(),
        }
    }

    pub fn expect(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(&x, &w)| w * f(x)).sum()
    }

    /// `E[f(u) g(v)]` for a mean-zero pair with covariance `[[a, c], [c, b]]`.
    pub fn expect_pair(&self, a: f64, b: f64, c: f64, f: impl Fn(f64) -> f64, g: impl Fn(f64) -> f64) -> Result<f64> {
        let scale = a.abs().max(b.abs()).max(1.0);
        if a < -1e-10 * scale || b < -1e-10 * scale {
            return Err(DmftError::QuadratureUnderflow { variance: a.min(b) });
        }
        if a < DETERMINISTIC_VARIANCE {
            let f0 = f(0.0);
            return Ok(if b < DETERMINISTIC_VARIANCE { f0 * g(0.0) } else { f0 * self.expect(|x| g(b.sqrt() * x)) });
        }
        let sa = a.sqrt();
        let slope = c / sa;
        let resid = b - slope * slope;
        if resid < -1e-10 * scale {
            return Err(DmftError::QuadratureUnderflow { variance: resid });
        }
        if resid < DETERMINISTIC_VARIANCE {
            return Ok(self.expect(|x| f(sa * x) * g(slope * x)));
        }
        let sr = resid.sqrt();
        let mut total = 0.0;
        for (&x1, &w1) in self.nodes.iter().zip(&self.weights) {
            let fu = f(sa * x1);
            if fu == 0.0 {
                continue;
            }
            let inner: f64 = self
                .nodes
                .iter()
                .zip(&self.weights)
                .map(|(&x2, &w2)| w2 * g(slope * x1 + sr * x2))
                .sum();
            total += w1 * fu * inner;
        }
        Ok(total)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normal_moments_are_exact() {
        let gh = GaussHermite::new(20);
        assert!((gh.expect(|_| 1.0) - 1.0).abs() < 1e-14);
        assert!(gh.expect(|x| x).abs() < 1e-13);
        assert!((gh.expect(|x| x * x) - 1.0).abs() < 1e-13);
        assert!((gh.expect(|x| x.powi(4)) - 3.0).abs() < 1e-12);
        assert!((gh.expect(|x| x.powi(6)) - 15.0).abs() < 1e-11);
    }

    #[test]
    fn correlated_pair_moments() {
        let gh = GaussHermite::new(10);
        let (a, b, c) = (2.0, 0.5, 0.7);
        let uv = gh.expect_pair(a, b, c, |u| u, |v| v).unwrap();
        assert!((uv - c).abs() < 1e-13);
        let u2v2 = gh.expect_pair(a, b, c, |u| u * u, |v| v * v).unwrap();
        assert!((u2v2 - (a * b + 2.0 * c * c)).abs() < 1e-12);
    }

    #[test]
    fn degenerate_variances_are_deterministic() {
        let gh = GaussHermite::new(10);
        let v = gh.expect_pair(0.0, 1.0, 0.0, |u| u + 1.0, |v| v * v).unwrap();
        assert!((v - 1.0).abs() < 1e-13);
        let perfectly_correlated = gh.expect_pair(1.0, 1.0, 1.0, |u| u, |v| v).unwrap();
        assert!((perfectly_correlated - 1.0).abs() < 1e-13);
    }

    #[test]
    fn negative_variance_is_rejected() {
        let gh = GaussHermite::new(4);
        assert!(matches!(
            gh.expect_pair(-1.0, 1.0, 0.0, |u| u, |v| v),
            Err(DmftError::QuadratureUnderflow { .. })
        ));
    }
}
