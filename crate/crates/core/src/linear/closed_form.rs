use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{DmftError, Result};
use crate::kernel::{integrate_predictions, Kernel, LossKind, SampleSet, TimeGrid, Trajectory};
use crate::linalg;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinearConfig {
    pub depth: usize,
    pub gamma0: f64,
    pub beta: f64,
    pub tol: f64,
    pub max_iters: usize,
    pub loss: LossKind,
    /// Pin A = B = 0 (the gradient-independence ansatz).
    pub drop_responses: bool,
}

impl Default for LinearConfig {
    fn default() -> Self {
        Self { depth: 1, gamma0: 1.0, beta: 0.6, tol: 1e-11, max_iters: 2000, loss: LossKind::Mse, drop_responses: false }
    }
}

impl LinearConfig {
    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 {
            return Err(DmftError::InvalidConfig("depth must be at least 1".into()));
        }
        if !(self.gamma0 >= 0.0 && self.gamma0.is_finite()) {
            return Err(DmftError::InvalidConfig(format!("gamma0 must be non-negative, got {}", self.gamma0)));
        }
        if !(self.beta > 0.0 && self.beta <= 1.0) {
            return Err(DmftError::InvalidConfig(format!("damping beta must lie in (0, 1], got {}", self.beta)));
        }
        if !(self.tol > 0.0) || self.max_iters == 0 {
            return Err(DmftError::InvalidConfig("tol and max_iters must be positive".into()));
        }
        Ok(())
    }
}

/// Closed-form deep-linear order parameters on a sample-major `(mu, k)` index.
///
/// The gradient fields do not depend on the sample, so G, A and B carry a
/// bare time index where the nonlinear theory would carry `(alpha, s)`.
#[derive(Clone, Debug)]
pub struct LinearDmftState {
    pub config: LinearConfig,
    pub grid: TimeGrid,
    pub n_train: usize,
    pub input_gram: DMatrix<f64>,
    pub targets: DVector<f64>,
    /// H^0..H^L, each `(n T) x (n T)`.
    pub h: Vec<DMatrix<f64>>,
    /// G^1..G^{L+1}, each `T x T`.
    pub g: Vec<DMatrix<f64>>,
    /// A^0..A^L, each `(n T) x T`, as densities in time.
    pub a: Vec<DMatrix<f64>>,
    /// B^0..B^L, each `T x (n T)`, as densities in time.
    pub b: Vec<DMatrix<f64>>,
    pub f: Trajectory,
    pub delta: Trajectory,
    /// Largest relative change per outer iteration.
    pub changes: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl LinearDmftState {
    pub fn depth(&self) -> usize {
        self.config.depth
    }

    fn n_samples(&self) -> usize {
        self.input_gram.nrows()
    }

    pub fn h_kernel(&self, layer: usize) -> Kernel {
        Kernel::square(format!("h{layer}"), self.h[layer].clone(), self.n_samples(), self.grid)
            .expect("H has the state's shape")
            .with_scheme("linear-closed-form")
    }

    /// `G^l` repeated over every sample pair.
    pub fn g_kernel(&self, layer: usize) -> Kernel {
        let n = self.n_samples();
        Kernel::square(format!("g{layer}"), expand_over_samples(&self.g[layer - 1], n), n, self.grid)
            .expect("expanded G has the state's shape")
            .with_scheme("linear-closed-form")
    }

    pub fn ntk(&self) -> Kernel {
        let l = self.depth();
        let n = self.n_samples();
        let mut total = self.h[l].clone();
        for layer in 0..l {
            total += expand_over_samples(&self.g[layer], n).component_mul(&self.h[layer]);
        }
        Kernel::square("ntk", total, n, self.grid).expect("NTK has the state's shape").with_scheme("linear-closed-form")
    }

    pub fn ntk_diagonal(&self) -> Vec<DMatrix<f64>> {
        ntk_diagonal(&self.h, &self.g, self.grid.n_steps(), self.depth())
    }

    /// Equal-time blocks `H^l(t_k, t_k)`.
    pub fn h_diagonal(&self, layer: usize) -> Vec<DMatrix<f64>> {
        let t = self.grid.n_steps();
        let n = self.n_samples();
        (0..t).map(|k| DMatrix::from_fn(n, n, |mu, al| self.h[layer][(mu * t + k, al * t + k)])).collect()
    }

    pub fn loss_curve(&self) -> Vec<f64> {
        (0..self.grid.n_steps())
            .map(|k| self.config.loss.mean((0..self.n_train).map(|mu| self.f.at(mu, k)), &self.targets))
            .collect()
    }
}

/// `G ⊗` over samples: entry `((mu,k),(alpha,j))` is `G[k, j]`.
pub(crate) fn expand_over_samples(g: &DMatrix<f64>, n: usize) -> DMatrix<f64> {
    let t = g.nrows();
    DMatrix::from_fn(n * t, n * t, |i, j| g[(i % t, j % t)])
}

fn ntk_diagonal(h: &[DMatrix<f64>], g: &[DMatrix<f64>], t: usize, depth: usize) -> Vec<DMatrix<f64>> {
    let n = h[0].nrows() / t;
    (0..t)
        .map(|k| {
            DMatrix::from_fn(n, n, |mu, al| {
                let (i, j) = (mu * t + k, al * t + k);
                h[depth][(i, j)] + (0..depth).map(|l| g[l][(k, k)] * h[l][(i, j)]).sum::<f64>()
            })
        })
        .collect()
}

/// Causal operators of one layer, sample-major.
struct Operators {
    /// `(n T) x T`
    c: DMatrix<f64>,
    /// `T x (n T)`
    d: DMatrix<f64>,
}

fn build_operators(
    a_prev: &DMatrix<f64>,
    h_prev: &DMatrix<f64>,
    b_this: &DMatrix<f64>,
    g_next: &DMatrix<f64>,
    delta: &Trajectory,
    dt: f64,
) -> Operators {
    let t = g_next.nrows();
    let n = h_prev.nrows() / t;
    let p = delta.n_samples();
    let mut c = a_prev * dt;
    let mut d = b_this * dt;
    for mu in 0..n {
        for k in 0..t {
            for j in 0..k {
                let s: f64 = (0..p).map(|al| h_prev[(mu * t + k, al * t + j)] * delta.at(al, j)).sum();
                c[(mu * t + k, j)] += dt * s;
            }
        }
    }
    for k in 0..t {
        for al in 0..p {
            for j in 0..k {
                d[(k, al * t + j)] += dt * g_next[(k, j)] * delta.at(al, j);
            }
        }
    }
    Operators { c, d }
}

fn damp(old: &mut DMatrix<f64>, new: DMatrix<f64>, beta: f64) -> f64 {
    let next = &*old * (1.0 - beta) + new * beta;
    let change = linalg::relative_change(&next, old);
    *old = next;
    change
}

/// Damped fixed-point solution of the deep-linear saddle-point equations.
///
/// Each outer iteration integrates Δ from the current kernels, then sweeps
/// layers `1..=L`, each using the latest lower-layer H, A and the previous
/// iterate's upper-layer G, B.
pub fn linear_solve(cfg: &LinearConfig, data: &SampleSet, grid: TimeGrid) -> Result<LinearDmftState> {
    cfg.validate()?;
    let depth = cfg.depth;
    let kx = data.input_gram().clone();
    let n = kx.nrows();
    let t = grid.n_steps();
    let nt = n * t;
    let h0 = linalg::expand_over_time(&kx, t);
    let ones = DMatrix::from_element(t, t, 1.0);
    let mut st = LinearDmftState {
        config: cfg.clone(),
        grid,
        n_train: data.n_train(),
        input_gram: kx,
        targets: data.targets().clone(),
        h: vec![h0; depth + 1],
        g: vec![ones; depth + 1],
        a: vec![DMatrix::zeros(nt, t); depth + 1],
        b: vec![DMatrix::zeros(t, nt); depth + 1],
        f: Trajectory::zeros(n, t),
        delta: Trajectory::zeros(data.n_train(), t),
        changes: Vec::new(),
        iterations: 0,
        converged: false,
    };
    let gamma2 = cfg.gamma0 * cfg.gamma0;
    let dt = grid.dt();
    let refresh = |st: &mut LinearDmftState| -> Result<()> {
        let blocks = ntk_diagonal(&st.h, &st.g, t, depth);
        let (f, delta) = integrate_predictions(&blocks, &st.targets, cfg.loss, &grid)?;
        st.f = f;
        st.delta = delta;
        Ok(())
    };
    while st.iterations < cfg.max_iters {
        refresh(&mut st)?;
        let mut max_change: f64 = 0.0;
        for l in 1..=depth {
            let ops = build_operators(&st.a[l - 1], &st.h[l - 1], &st.b[l], &st.g[l], &st.delta, dt);
            let (c, d) = (&ops.c, &ops.d);

            let lhs = DMatrix::identity(nt, nt) - (c * d) * gamma2;
            let lu = lhs.lu();
            let solve = |rhs: &DMatrix<f64>| lu.solve(rhs).ok_or(DmftError::SingularResolvent { layer: l });
            let mut rhs = st.h[l - 1].clone();
            rhs += (c * &st.g[l] * c.transpose()) * gamma2;
            let mut h_new = solve(&solve(&rhs)?.transpose())?;
            linalg::symmetrize(&mut h_new);
            max_change = max_change.max(damp(&mut st.h[l], h_new, cfg.beta));

            let lhs_g = DMatrix::identity(t, t) - (d * c) * gamma2;
            let lu_g = lhs_g.lu();
            let solve_g = |rhs: &DMatrix<f64>| lu_g.solve(rhs).ok_or(DmftError::SingularResolvent { layer: l });
            let mut rhs_g = st.g[l].clone();
            rhs_g += (d * &st.h[l - 1] * d.transpose()) * gamma2;
            let mut g_new = solve_g(&solve_g(&rhs_g)?.transpose())?;
            linalg::symmetrize(&mut g_new);
            max_change = max_change.max(damp(&mut st.g[l - 1], g_new, cfg.beta));

            if !cfg.drop_responses {
                if l < depth {
                    let a_new = solve(c)? / dt;
                    max_change = max_change.max(damp(&mut st.a[l], a_new, cfg.beta));
                }
                if l >= 2 {
                    let b_new = solve_g(d)? / dt;
                    max_change = max_change.max(damp(&mut st.b[l - 1], b_new, cfg.beta));
                }
            }
        }
        if st.h.iter().chain(st.g.iter()).any(|m| m.iter().any(|v| !v.is_finite())) {
            return Err(DmftError::NonFiniteValue { context: format!("linear kernels at iteration {}", st.iterations + 1) });
        }
        st.iterations += 1;
        st.changes.push(max_change);
        if max_change < cfg.tol {
            st.converged = true;
            break;
        }
    }
    refresh(&mut st)?;
    Ok(st)
}

/// Residual `‖A − C − γ₀² C D A‖_F / ‖A‖_F` of the resolvent identity for
/// layer `l`, rebuilt from the state's kernels and Δ.
pub fn resolvent_residual(st: &LinearDmftState, layer: usize) -> f64 {
    let dt = st.grid.dt();
    let ops = build_operators(&st.a[layer - 1], &st.h[layer - 1], &st.b[layer], &st.g[layer], &st.delta, dt);
    let gamma2 = st.config.gamma0 * st.config.gamma0;
    let a = &st.a[layer] * dt;
    let resid = &a - &ops.c - (&ops.c * (&ops.d * &a)) * gamma2;
    resid.norm() / a.norm().max(f64::MIN_POSITIVE)
}
