use std::f64::consts::PI;

use nalgebra::DMatrix;

use super::quadrature::{GaussHermite, DETERMINISTIC_VARIANCE};
use crate::activation::Activation;
use crate::error::{DmftError, Result};
use crate::kernel::{Kernel, TimeGrid};

pub const DEFAULT_QUADRATURE_NODES: usize = 40;

/// Node count for one-dimensional diagonal moments, which are cheap enough
/// to resolve to near machine precision.
pub const DIAGONAL_QUADRATURE_NODES: usize = 200;

/// Lazy-limit (γ₀ = 0) kernels, constant in time.
#[derive(Clone, Debug, PartialEq)]
pub struct StaticKernels {
    /// `phi0[l]` is Φ^l for `l = 0..=L`, with Φ^0 the input gram.
    pub phi0: Vec<DMatrix<f64>>,
    /// `gdot0[l - 1]` is `E[φ'(h^l) φ'(h^l)]` for `l = 1..=L`.
    pub gdot0: Vec<DMatrix<f64>>,
    /// `g0[l - 1]` is G^l for `l = 1..=L+1`; the last entry is all ones.
    pub g0: Vec<DMatrix<f64>>,
    pub ntk0: DMatrix<f64>,
    pub bias: bool,
}

impl StaticKernels {
    pub fn depth(&self) -> usize {
        self.gdot0.len()
    }

    pub fn phi(&self, layer: usize) -> &DMatrix<f64> {
        &self.phi0[layer]
    }

    pub fn g(&self, layer: usize) -> &DMatrix<f64> {
        &self.g0[layer - 1]
    }

    /// Feature kernels Φ^0..Φ^L and gradient kernels G^1..G^{L+1} expanded over `grid`.
    pub fn on_grid(&self, grid: TimeGrid) -> Result<(Vec<Kernel>, Vec<Kernel>)> {
        let phis = self
            .phi0
            .iter()
            .enumerate()
            .map(|(l, m)| Kernel::constant_in_time(format!("phi{l}"), m, grid))
            .collect::<Result<Vec<_>>>()?;
        let gs = self
            .g0
            .iter()
            .enumerate()
            .map(|(l, m)| Kernel::constant_in_time(format!("g{}", l + 1), m, grid))
            .collect::<Result<Vec<_>>>()?;
        Ok((phis, gs))
    }
}

/// Layerwise Gaussian recursions for the NNGP kernels Φ^l, the derivative
/// kernels, the backward G^l = Φ̇^l ⊙ G^{l+1}, and the static NTK.
pub fn static_kernels(activation: Activation, kx: &DMatrix<f64>, depth: usize, n_quad: usize) -> Result<StaticKernels> {
    build(activation, kx, depth, n_quad, false)
}

/// As [`static_kernels`] with a unit-variance trainable bias in every hidden layer.
pub fn static_kernels_with_bias(
    activation: Activation,
    kx: &DMatrix<f64>,
    depth: usize,
    n_quad: usize,
) -> Result<StaticKernels> {
    build(activation, kx, depth, n_quad, true)
}

fn build(activation: Activation, kx: &DMatrix<f64>, depth: usize, n_quad: usize, bias: bool) -> Result<StaticKernels> {
    if depth == 0 {
        return Err(DmftError::InvalidConfig("depth must be at least 1".into()));
    }
    if kx.nrows() != kx.ncols() {
        return Err(DmftError::ShapeMismatch("input gram must be square".into()));
    }
    let n = kx.nrows();
    let gh = GaussHermite::new(n_quad.max(1));
    let gh_diag = GaussHermite::new(n_quad.max(DIAGONAL_QUADRATURE_NODES));
    let shift = if bias { 1.0 } else { 0.0 };
    let mut phi0 = vec![kx.clone()];
    let mut gdot0 = Vec::with_capacity(depth);
    for _ in 0..depth {
        let cov = phi0.last().unwrap().add_scalar(shift);
        let (phi, gdot) = layer_moments(activation, &cov, &gh, &gh_diag)?;
        phi0.push(phi);
        gdot0.push(gdot);
    }
    let mut g0 = vec![DMatrix::from_element(n, n, 1.0); depth + 1];
    for l in (0..depth).rev() {
        g0[l] = gdot0[l].component_mul(&g0[l + 1]);
    }
    let mut ntk0 = phi0[depth].clone();
    for l in 0..depth {
        ntk0 += g0[l].component_mul(&phi0[l].add_scalar(shift));
    }
    Ok(StaticKernels { phi0, gdot0, g0, ntk0, bias })
}

fn layer_moments(
    activation: Activation,
    cov: &DMatrix<f64>,
    gh: &GaussHermite,
    gh_diag: &GaussHermite,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let n = cov.nrows();
    let mut phi = DMatrix::zeros(n, n);
    let mut gdot = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let (a, b, c) = (cov[(i, i)], cov[(j, j)], cov[(i, j)]);
            let (p, d) = match activation {
                Activation::Linear => (c, 1.0),
                Activation::Relu => relu_moments(a, b, c)?,
                Activation::Tanh if i == j => diagonal_moments(activation, a, gh_diag)?,
                Activation::Tanh => (
                    gh.expect_pair(a, b, c, |u| activation.eval(u), |v| activation.eval(v))?,
                    gh.expect_pair(a, b, c, |u| activation.deriv(u), |v| activation.deriv(v))?,
                ),
            };
            phi[(i, j)] = p;
            phi[(j, i)] = p;
            gdot[(i, j)] = d;
            gdot[(j, i)] = d;
        }
    }
    Ok((phi, gdot))
}

fn diagonal_moments(activation: Activation, a: f64, gh: &GaussHermite) -> Result<(f64, f64)> {
    if a < -1e-10 * a.abs().max(1.0) {
        return Err(DmftError::QuadratureUnderflow { variance: a });
    }
    if a < DETERMINISTIC_VARIANCE {
        return Ok((activation.eval(0.0).powi(2), activation.deriv(0.0).powi(2)));
    }
    let s = a.sqrt();
    Ok((gh.expect(|x| activation.eval(s * x).powi(2)), gh.expect(|x| activation.deriv(s * x).powi(2))))
}

/// Arc-cosine kernels of degree one and zero.
fn relu_moments(a: f64, b: f64, c: f64) -> Result<(f64, f64)> {
    let scale = a.abs().max(b.abs()).max(1.0);
    if a < -1e-10 * scale || b < -1e-10 * scale {
        return Err(DmftError::QuadratureUnderflow { variance: a.min(b) });
    }
    if a < DETERMINISTIC_VARIANCE || b < DETERMINISTIC_VARIANCE {
        return Ok((0.0, 0.0));
    }
    let norm = (a * b).sqrt();
    let cos = (c / norm).clamp(-1.0, 1.0);
    let theta = cos.acos();
    let phi = norm / (2.0 * PI) * (theta.sin() + (PI - theta) * cos);
    let gdot = (PI - theta) / (2.0 * PI);
    Ok((phi, gdot))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn gram() -> DMatrix<f64> {
        DMatrix::from_row_slice(3, 3, &[1.0, 0.3, -0.2, 0.3, 1.4, 0.5, -0.2, 0.5, 0.8])
    }

    #[test]
    fn linear_kernels_are_exact() {
        for depth in 1..4 {
            let s = static_kernels(Activation::Linear, &gram(), depth, 10).unwrap();
            for l in 0..=depth {
                assert_eq!(s.phi0[l], gram());
            }
            assert!(s.g0.iter().all(|g| g.iter().all(|&v| v == 1.0)));
            assert!((&s.ntk0 - gram() * (depth as f64 + 1.0)).abs().max() < 1e-14);
        }
    }

    #[test]
    fn relu_on_orthogonal_inputs_against_monte_carlo() {
        let s = static_kernels(Activation::Relu, &DMatrix::identity(2, 2), 1, 10).unwrap();
        let expected_off = 1.0 / (2.0 * PI);
        assert!((s.phi0[1][(0, 0)] - 0.5).abs() < 1e-15);
        assert!((s.phi0[1][(0, 1)] - expected_off).abs() < 1e-15);

        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let n = 10_000_000;
        let (mut diag, mut off) = (0.0, 0.0);
        for _ in 0..n {
            let u: f64 = StandardNormal.sample(&mut rng);
            let v: f64 = StandardNormal.sample(&mut rng);
            diag += u.max(0.0).powi(2);
            off += u.max(0.0) * v.max(0.0);
        }
        let tol = 5.0 / (n as f64).sqrt();
        assert!((diag / n as f64 - s.phi0[1][(0, 0)]).abs() < tol);
        assert!((off / n as f64 - s.phi0[1][(0, 1)]).abs() < tol);
    }

    #[test]
    fn relu_quadrature_agrees_with_arc_cosine() {
        let gh = GaussHermite::new(200);
        let (p, d) = relu_moments(1.3, 0.7, 0.4).unwrap();
        let act = Activation::Relu;
        let pq = gh.expect_pair(1.3, 0.7, 0.4, |u| act.eval(u), |v| act.eval(v)).unwrap();
        assert!((p - pq).abs() < 1e-3);
        let dq = gh.expect_pair(1.3, 0.7, 0.4, |u| act.deriv(u), |v| act.deriv(v)).unwrap();
        assert!((d - dq).abs() < 2e-2);
    }

    /// Adaptive Simpson integration of `tanh(√a x)² φ(x)` on a wide interval.
    fn tanh_square_oracle(a: f64) -> f64 {
        fn simpson(f: &dyn Fn(f64) -> f64, lo: f64, hi: f64, whole: f64, tol: f64, depth: u32) -> f64 {
            let mid = 0.5 * (lo + hi);
            let left = (mid - lo) / 6.0 * (f(lo) + 4.0 * f(0.5 * (lo + mid)) + f(mid));
            let right = (hi - mid) / 6.0 * (f(mid) + 4.0 * f(0.5 * (mid + hi)) + f(hi));
            if depth == 0 || (left + right - whole).abs() < 15.0 * tol {
                left + right + (left + right - whole) / 15.0
            } else {
                simpson(f, lo, mid, left, tol / 2.0, depth - 1) + simpson(f, mid, hi, right, tol / 2.0, depth - 1)
            }
        }
        let f = move |x: f64| (a.sqrt() * x).tanh().powi(2) * (-0.5 * x * x).exp() / (2.0 * PI).sqrt();
        let (lo, hi) = (-12.0, 12.0);
        let whole = (hi - lo) / 6.0 * (f(lo) + 4.0 * f(0.0) + f(hi));
        simpson(&f, lo, hi, whole, 1e-13, 40)
    }

    #[test]
    fn tanh_diagonal_matches_adaptive_quadrature() {
        let kx = gram();
        let s = static_kernels(Activation::Tanh, &kx, 1, DEFAULT_QUADRATURE_NODES).unwrap();
        for i in 0..3 {
            let oracle = tanh_square_oracle(kx[(i, i)]);
            assert!((s.phi0[1][(i, i)] - oracle).abs() < 1e-8, "entry {i}: {} vs {oracle}", s.phi0[1][(i, i)]);
        }
    }

    #[test]
    fn recomputation_is_identical() {
        let a = static_kernels(Activation::Tanh, &gram(), 3, 20).unwrap();
        let b = static_kernels(Activation::Tanh, &gram(), 3, 20).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn bias_shifts_input_covariance() {
        let kx = gram();
        let s = static_kernels_with_bias(Activation::Linear, &kx, 2, 10).unwrap();
        assert!((&s.phi0[1] - kx.add_scalar(1.0)).abs().max() < 1e-15);
        assert!((&s.phi0[2] - kx.add_scalar(2.0)).abs().max() < 1e-15);
    }

    #[test]
    fn gradient_kernels_follow_backward_recursion() {
        let s = static_kernels(Activation::Tanh, &gram(), 3, 20).unwrap();
        for l in 1..=3 {
            let expected = s.gdot0[l - 1].component_mul(s.g(l + 1));
            assert!((s.g(l) - expected).abs().max() < 1e-15);
        }
    }
}
