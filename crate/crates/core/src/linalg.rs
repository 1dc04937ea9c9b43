//! Dense linear-algebra helpers shared by the solvers.
//!
//! Hot loops work on row-major `f64` slices and call straight into
//! `matrixmultiply`; everything else uses `nalgebra::DMatrix`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{DmftError, Result};

/// Jitter levels tried (relative to the mean diagonal) when a covariance does not factor.
pub const JITTER_LADDER: [f64; 6] = [0.0, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6];

/// Row-major `c = alpha * a * b + beta * c` with explicit strides.
///
/// `a` is `m x k` with strides `(rsa, csa)`, `b` is `k x n` with `(rsb, csb)`,
/// `c` is `m x n` with row stride `rsc` and unit column stride.
#[allow(clippy::too_many_arguments)]
#[inline]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: &[f64],
    rsa: usize,
    csa: usize,
    b: &[f64],
    rsb: usize,
    csb: usize,
    beta: f64,
    c: &mut [f64],
    rsc: usize,
) {
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if beta == 0.0 {
            for i in 0..m {
                c[i * rsc..i * rsc + n].iter_mut().for_each(|v| *v = 0.0);
            }
        } else if beta != 1.0 {
            for i in 0..m {
                c[i * rsc..i * rsc + n].iter_mut().for_each(|v| *v *= beta);
            }
        }
        return;
    }
    debug_assert!(a.len() >= (m - 1) * rsa + (k - 1) * csa + 1);
    debug_assert!(b.len() >= (k - 1) * rsb + (n - 1) * csb + 1);
    debug_assert!(c.len() >= (m - 1) * rsc + n);
    // SAFETY: the slice bounds above cover every element addressed by the strides.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            1,
        );
    }
}

/// Lower Cholesky factor in row-major order, or `None` if a pivot falls below
/// `min_pivot`.
pub(crate) fn cholesky_rowmajor(a: &[f64], n: usize, min_pivot: f64) -> Option<Vec<f64>> {
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let (li, lj) = (&l[i * n..i * n + j], &l[j * n..j * n + j]);
            let dot: f64 = li.iter().zip(lj).map(|(x, y)| x * y).sum();
            let v = a[i * n + j] - dot;
            if i == j {
                if !(v > min_pivot) || !v.is_finite() {
                    return None;
                }
                l[i * n + i] = v.sqrt();
            } else {
                l[i * n + j] = v / l[j * n + j];
            }
        }
    }
    Some(l)
}

/// Factor a symmetric PSD matrix as `L Lᵀ`, escalating diagonal jitter along
/// [`JITTER_LADDER`] until the factorization succeeds.
///
/// Returns the row-major factor and the absolute jitter that was added. An
/// identically zero matrix yields a zero factor.
pub fn jittered_cholesky(cov: &DMatrix<f64>) -> Result<(Vec<f64>, f64)> {
    let n = cov.nrows();
    if cov.ncols() != n {
        return Err(DmftError::ShapeMismatch(format!(
            "covariance must be square, got {}x{}",
            n,
            cov.ncols()
        )));
    }
    if n == 0 {
        return Ok((Vec::new(), 0.0));
    }
    if cov.iter().any(|v| !v.is_finite()) {
        return Err(DmftError::NonFiniteValue {
            context: "covariance passed to factorization".into(),
        });
    }
    if cov.iter().all(|&v| v == 0.0) {
        return Ok((vec![0.0; n * n], 0.0));
    }
    let scale = (cov.diagonal().iter().map(|v| v.abs()).sum::<f64>() / n as f64).max(f64::MIN_POSITIVE);
    let base = to_rowmajor(cov);
    let min_pivot = 1e-13 * scale;
    let mut work = base.clone();
    for &rel in JITTER_LADDER.iter() {
        let jitter = rel * scale;
        for i in 0..n {
            work[i * n + i] = base[i * n + i] + jitter;
        }
        if let Some(l) = cholesky_rowmajor(&work, n, min_pivot) {
            return Ok((l, jitter));
        }
    }
    Err(DmftError::FactorizationFailure {
        dim: n,
        jitter: JITTER_LADDER[JITTER_LADDER.len() - 1] * scale,
    })
}

pub(crate) fn to_rowmajor(m: &DMatrix<f64>) -> Vec<f64> {
    let (r, c) = m.shape();
    let mut out = Vec::with_capacity(r * c);
    for i in 0..r {
        for j in 0..c {
            out.push(m[(i, j)]);
        }
    }
    out
}

pub(crate) fn from_rowmajor(r: usize, c: usize, data: &[f64]) -> DMatrix<f64> {
    DMatrix::from_row_slice(r, c, data)
}

/// Index permutation between sample-major `(mu, k) -> mu*T + k` and
/// time-major `(k, mu) -> k*P + mu` flattenings.
#[derive(Clone, Copy, Debug)]
pub(crate) struct FlatIndex {
    pub samples: usize,
    pub steps: usize,
}

impl FlatIndex {
    #[inline]
    pub fn sample_major(&self, mu: usize, k: usize) -> usize {
        mu * self.steps + k
    }

    #[inline]
    pub fn time_major(&self, mu: usize, k: usize) -> usize {
        k * self.samples + mu
    }

    pub fn len(&self) -> usize {
        self.samples * self.steps
    }

    /// Square sample-major matrix -> row-major buffer in time-major order.
    pub fn to_time_major(&self, m: &DMatrix<f64>) -> Vec<f64> {
        let n = self.len();
        let mut out = vec![0.0; n * n];
        for mu in 0..self.samples {
            for k in 0..self.steps {
                let row = self.time_major(mu, k) * n;
                let src_row = self.sample_major(mu, k);
                for al in 0..self.samples {
                    for j in 0..self.steps {
                        out[row + self.time_major(al, j)] = m[(src_row, self.sample_major(al, j))];
                    }
                }
            }
        }
        out
    }

    /// Row-major time-major buffer -> sample-major matrix, scaled by `scale`.
    pub fn to_sample_major(&self, buf: &[f64], scale: f64) -> DMatrix<f64> {
        let n = self.len();
        let mut out = DMatrix::zeros(n, n);
        for mu in 0..self.samples {
            for k in 0..self.steps {
                let row = self.time_major(mu, k) * n;
                let dst_row = self.sample_major(mu, k);
                for al in 0..self.samples {
                    for j in 0..self.steps {
                        out[(dst_row, self.sample_major(al, j))] = scale * buf[row + self.time_major(al, j)];
                    }
                }
            }
        }
        out
    }
}

pub fn frobenius(m: &DMatrix<f64>) -> f64 {
    m.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// `‖new − old‖_F / (‖old‖_F + 1e-12)`.
pub fn relative_change(new: &DMatrix<f64>, old: &DMatrix<f64>) -> f64 {
    let diff: f64 = new.iter().zip(old.iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    diff / (frobenius(old) + 1e-12)
}

pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    let eig = SymmetricEigen::new(m.clone());
    eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min)
}

/// `exp(-t M) v` for symmetric `M` via its eigendecomposition.
pub fn sym_expm_apply(m: &DMatrix<f64>, t: f64, v: &DVector<f64>) -> DVector<f64> {
    let eig = SymmetricEigen::new(m.clone());
    let q = &eig.eigenvectors;
    let mut coeffs = q.transpose() * v;
    for (c, lam) in coeffs.iter_mut().zip(eig.eigenvalues.iter()) {
        *c *= (-t * lam).exp();
    }
    q * coeffs
}

/// Kronecker product `base ⊗ 1 1ᵀ` over a time grid of `steps` points, sample-major.
pub fn expand_over_time(base: &DMatrix<f64>, steps: usize) -> DMatrix<f64> {
    let (r, c) = base.shape();
    DMatrix::from_fn(r * steps, c * steps, |i, j| base[(i / steps, j / steps)])
}
