use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{DmftError, Result};
use crate::kernel::{Kernel, TimeGrid};
use crate::linalg;

pub const PERTURBATIVE_SCHEME: &str = "perturbative-γ₀²";

/// How the lazy error signal Δ⁰ is evaluated on the grid.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LazyErrorScheme {
    /// `Δ⁰(t) = exp(−(L+1) K^x t) y`.
    #[default]
    Exact,
    /// Forward Euler on the grid, identical to the lazy limit of the discrete solvers.
    Euler,
}

/// The functions `v_α(t) = ∫₀ᵗ Δ⁰_α` and `v_αβ(t) = ∫₀ᵗ Δ⁰_α(s) ∫₀ˢ Δ⁰_β`,
/// accumulated with left-endpoint sums.
#[derive(Clone, Debug, PartialEq)]
pub struct PerturbationFunctions {
    /// `P x T`
    pub delta0: DMatrix<f64>,
    /// `P x T`
    pub v_alpha: DMatrix<f64>,
    /// One `P x P` matrix per step with entry `(α, β) = v_αβ(t_k)`.
    pub v_alphabeta: Vec<DMatrix<f64>>,
}

impl PerturbationFunctions {
    pub fn new(kx: &DMatrix<f64>, y: &DVector<f64>, grid: &TimeGrid, depth: usize, scheme: LazyErrorScheme) -> Self {
        let p = y.len();
        let t = grid.n_steps();
        let dt = grid.dt();
        let rate = kx * (depth as f64 + 1.0);
        let mut delta0 = DMatrix::zeros(p, t);
        match scheme {
            LazyErrorScheme::Exact => {
                for k in 0..t {
                    delta0.set_column(k, &linalg::sym_expm_apply(&rate, grid.time(k), y));
                }
            }
            LazyErrorScheme::Euler => {
                let mut d = y.clone();
                for k in 0..t {
                    delta0.set_column(k, &d);
                    d -= &rate * &d * dt;
                }
            }
        }
        let mut v_alpha = DMatrix::zeros(p, t);
        let mut v_alphabeta = vec![DMatrix::zeros(p, p); t];
        for k in 1..t {
            let d = delta0.column(k - 1);
            let v = v_alpha.column(k - 1).into_owned();
            v_alphabeta[k] = &v_alphabeta[k - 1] + (d * v.transpose()) * dt;
            let next = v + d * dt;
            v_alpha.set_column(k, &next);
        }
        Self { delta0, v_alpha, v_alphabeta }
    }
}

/// Leading-order deep-linear kernels.
#[derive(Clone, Debug)]
pub struct PerturbativeNtk {
    /// `(L+1) K^x + γ₀² K^{(2)}`
    pub ntk: Kernel,
    /// `K^{(2)}`, the coefficient of γ₀².
    pub ntk2: DMatrix<f64>,
    /// `H^{l,2}` for `l = 1..=L`, sample-major `(P T) x (P T)`.
    pub h2: Vec<DMatrix<f64>>,
    /// `G^{l,2}` for `l = 1..=L`, `T x T`.
    pub g2: Vec<DMatrix<f64>>,
    pub functions: PerturbationFunctions,
}

/// Layer weights of the two O(γ₀²) structures in `H^{l,2}` and `G^{l,2}`.
///
/// At zeroth order the causal operators of layer `m` are `m·c` and
/// `(L+1−m)·d`, so the per-layer increments are `m(L+1−m)` for the
/// symmetrized `c d` term, `m²` for `c cᵀ`, and `(L+1−m)²` for `d dᵀ`.
pub fn layer_weights(depth: usize) -> (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>) {
    let big = depth as f64 + 1.0;
    let mixed = |m: usize| m as f64 * (big - m as f64);
    let (mut a, mut b, mut c, mut d) = (vec![0.0; depth], vec![0.0; depth], vec![0.0; depth], vec![0.0; depth]);
    let mut acc = (0.0, 0.0);
    for l in 1..=depth {
        acc.0 += mixed(l);
        acc.1 += (l * l) as f64;
        a[l - 1] = acc.0;
        b[l - 1] = acc.1;
    }
    let mut acc = (0.0, 0.0);
    for l in (1..=depth).rev() {
        acc.0 += mixed(l);
        acc.1 += (big - l as f64).powi(2);
        c[l - 1] = acc.0;
        d[l - 1] = acc.1;
    }
    (a, b, c, d)
}

/// Deep-linear NTK to order γ₀², with the per-layer corrections.
pub fn perturbative_linear_ntk(
    kx: &DMatrix<f64>,
    y: &DVector<f64>,
    grid: &TimeGrid,
    gamma0: f64,
    depth: usize,
    scheme: LazyErrorScheme,
) -> Result<PerturbativeNtk> {
    let p = y.len();
    if kx.nrows() != p || kx.ncols() != p {
        return Err(DmftError::ShapeMismatch(format!("input gram {:?} for {p} targets", kx.shape())));
    }
    if depth == 0 {
        return Err(DmftError::InvalidConfig("depth must be at least 1".into()));
    }
    let t = grid.n_steps();
    let fns = PerturbationFunctions::new(kx, y, grid, depth, scheme);
    let x: Vec<DMatrix<f64>> = fns.v_alphabeta.iter().map(|v2| kx * v2 * kx).collect();
    let kv = kx * &fns.v_alpha;
    let w: Vec<f64> = fns.v_alphabeta.iter().map(|v2| kx.dot(v2)).collect();
    let vkv = fns.v_alpha.transpose() * kx * &fns.v_alpha;

    let n = p * t;
    let h_sym = DMatrix::from_fn(n, n, |i, j| {
        let (mu, k, nu, s) = (i / t, i % t, j / t, j % t);
        x[k][(mu, nu)] + x[s][(nu, mu)]
    });
    let h_outer = DMatrix::from_fn(n, n, |i, j| kv[(i / t, i % t)] * kv[(j / t, j % t)]);
    let g_sym = DMatrix::from_fn(t, t, |k, s| w[k] + w[s]);

    let (a, b, c, d) = layer_weights(depth);
    let h2: Vec<DMatrix<f64>> = (0..depth).map(|l| &h_sym * a[l] + &h_outer * b[l]).collect();
    let g2: Vec<DMatrix<f64>> = (0..depth).map(|l| &g_sym * c[l] + &vkv * d[l]).collect();

    let h0 = linalg::expand_over_time(kx, t);
    let mut ntk2 = DMatrix::zeros(n, n);
    for l in 0..depth {
        ntk2 += &h2[l];
        ntk2 += crate::linear::expand_over_samples(&g2[l], p).component_mul(&h0);
    }
    let values = &h0 * (depth as f64 + 1.0) + &ntk2 * (gamma0 * gamma0);
    let ntk = Kernel::square("ntk", values, p, *grid)?.with_scheme(PERTURBATIVE_SCHEME);
    Ok(PerturbativeNtk { ntk, ntk2, h2, g2, functions: fns })
}
