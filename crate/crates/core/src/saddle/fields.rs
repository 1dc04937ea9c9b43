//! Single-site field recursions and their sensitivity propagation.
//!
//! Internally every `(sample, time)` vector is flattened time-major
//! (`k * P + mu`), so the strictly causal history of step `k` is the
//! contiguous prefix `0..k * P`.

use nalgebra::DMatrix;

use crate::activation::Activation;
use crate::error::{DmftError, Result};
use crate::kernel::{Kernel, Trajectory};
use crate::linalg::{self, FlatIndex};

/// Kernels and error signal that drive one hidden layer's fields.
#[derive(Clone, Copy, Debug)]
pub struct LayerInputs<'a> {
    /// Φ^{l-1}, the covariance of the forward source `u`.
    pub phi_prev: &'a Kernel,
    /// G^{l+1}, the covariance of the backward source `r`.
    pub g_next: &'a Kernel,
    /// A^{l-1}; `None` means identically zero.
    pub a_prev: Option<&'a Kernel>,
    /// B^l; `None` means identically zero.
    pub b_this: Option<&'a Kernel>,
    /// Δ over the train samples (the first rows of the kernels' sample set).
    pub delta: &'a Trajectory,
    pub activation: Activation,
    pub gamma0: f64,
    pub lambda_wd: f64,
    pub use_bias: bool,
}

/// Precomputed causal interaction matrices for one layer.
#[derive(Clone, Debug)]
pub struct LayerProblem {
    pub(crate) index: FlatIndex,
    pub(crate) activation: Activation,
    /// `M_h[(k,mu),(j,alpha)]` for `j < k`, row-major over the time-major index.
    pub(crate) mh: Vec<f64>,
    pub(crate) mz: Vec<f64>,
    /// `e^{-λ t_k}` per step.
    pub(crate) decay: Vec<f64>,
}

/// Source columns per sweep of the sensitivity recursion.
const COLUMN_BLOCK: usize = 64;

/// Fields of one Monte-Carlo sample, time-major.
#[derive(Clone, Debug, Default)]
pub(crate) struct SampleFields {
    pub h: Vec<f64>,
    pub z: Vec<f64>,
    pub g: Vec<f64>,
    pub phi: Vec<f64>,
}

impl SampleFields {
    pub fn new(n: usize) -> Self {
        Self { h: vec![0.0; n], z: vec![0.0; n], g: vec![0.0; n], phi: vec![0.0; n] }
    }
}

/// Which Gaussian source a sensitivity is taken with respect to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Source {
    /// The backward source `r`; feeds A.
    R,
    /// The forward source `u`; feeds B.
    U,
}

/// Scratch for one sensitivity propagation, all `n x n` row-major time-major.
#[derive(Clone, Debug)]
pub(crate) struct JacobianWork {
    /// ∂h/∂source
    pub jh: Vec<f64>,
    /// ∂z/∂source
    pub jz: Vec<f64>,
    /// ∂φ(h)/∂source
    pub w: Vec<f64>,
    /// ∂g/∂source
    pub q: Vec<f64>,
}

impl JacobianWork {
    pub fn new(n: usize) -> Self {
        Self { jh: vec![0.0; n * n], jz: vec![0.0; n * n], w: vec![0.0; n * n], q: vec![0.0; n * n] }
    }
}

impl LayerProblem {
    pub fn new(inp: &LayerInputs<'_>) -> Result<Self> {
        let grid = inp.phi_prev.grid;
        let samples = inp.phi_prev.n_row_samples();
        let steps = grid.n_steps();
        let index = FlatIndex { samples, steps };
        let n = index.len();
        let n_train = inp.delta.n_samples();
        let square = |k: &Kernel| k.values.nrows() == n && k.values.ncols() == n && k.grid == grid;
        let all_square = square(inp.g_next)
            && inp.a_prev.map_or(true, square)
            && inp.b_this.map_or(true, square)
            && square(inp.phi_prev);
        if !all_square || n_train > samples || inp.delta.n_steps() != steps {
            return Err(DmftError::ShapeMismatch(format!(
                "layer inputs do not share a {samples}-sample, {steps}-step index space"
            )));
        }
        let dt = grid.dt();
        let lam = inp.lambda_wd;
        let decay: Vec<f64> = (0..steps).map(|k| (-lam * grid.time(k)).exp()).collect();
        let bias = if inp.use_bias { 1.0 } else { 0.0 };
        let scale = inp.gamma0 * dt;
        let mut mh = vec![0.0; n * n];
        let mut mz = vec![0.0; n * n];
        for k in 1..steps {
            for j in 0..k {
                let carry = (-lam * (grid.time(k) - grid.time(j))).exp();
                for mu in 0..samples {
                    let row = index.time_major(mu, k) * n;
                    let sr = index.sample_major(mu, k);
                    for al in 0..samples {
                        let col = index.time_major(al, j);
                        let src = index.sample_major(al, j);
                        let d = if al < n_train { inp.delta.at(al, j) } else { 0.0 };
                        let mut vh = carry * d * (inp.phi_prev.values[(sr, src)] + bias);
                        let mut vz = carry * d * inp.g_next.values[(sr, src)];
                        if let Some(a) = inp.a_prev {
                            vh += decay[k] * a.values[(sr, src)];
                        }
                        if let Some(b) = inp.b_this {
                            vz += decay[k] * b.values[(sr, src)];
                        }
                        mh[row + col] = scale * vh;
                        mz[row + col] = scale * vz;
                    }
                }
            }
        }
        Ok(Self { index, activation: inp.activation, mh, mz, decay })
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.index.len()
    }

    /// Forward-in-time solve for `h, z, g` given time-major sources.
    pub(crate) fn solve_into(&self, u: &[f64], r: &[f64], out: &mut SampleFields) -> Result<()> {
        let (p, n) = (self.index.samples, self.index.len());
        let act = self.activation;
        for k in 0..self.index.steps {
            let hist = k * p;
            for i in hist..hist + p {
                let row = &self.mh[i * n..i * n + hist];
                let h = self.decay[k] * u[i] + row.iter().zip(&out.g[..hist]).map(|(m, g)| m * g).sum::<f64>();
                out.h[i] = h;
                out.phi[i] = act.eval(h);
            }
            for i in hist..hist + p {
                let row = &self.mz[i * n..i * n + hist];
                let z = self.decay[k] * r[i] + row.iter().zip(&out.phi[..hist]).map(|(m, f)| m * f).sum::<f64>();
                out.z[i] = z;
                out.g[i] = act.deriv(out.h[i]) * z;
            }
            if out.h[hist..hist + p].iter().chain(&out.z[hist..hist + p]).any(|v| !v.is_finite()) {
                return Err(DmftError::NonFiniteValue { context: format!("fields at step {k}") });
            }
        }
        Ok(())
    }

    /// Propagate sensitivities of the fields in `f` with respect to `source`.
    ///
    /// Only the causal window of each row is written; everything else in `ws`
    /// must be zero on entry and stays zero. Each source column evolves
    /// independently, so columns are swept in narrow blocks that stay in cache.
    pub(crate) fn propagate_into(&self, f: &SampleFields, source: Source, ws: &mut JacobianWork) {
        let (p, n) = (self.index.samples, self.index.len());
        let act = self.activation;
        for c0 in (0..n).step_by(COLUMN_BLOCK) {
            let c1 = (c0 + COLUMN_BLOCK).min(n);
            let first = c0 / p;
            let live = first * p;
            for k in first..self.index.steps {
                let hist = k * p;
                if hist > c0 {
                    let cols = c1.min(hist) - c0;
                    let (a_h, a_z) = (&self.mh[hist * n + live..], &self.mz[hist * n + live..]);
                    let jh_rows = &mut ws.jh[hist * n + c0..];
                    linalg::gemm(p, hist - live, cols, 1.0, a_h, n, 1, &ws.q[live * n + c0..], n, 1, 0.0, jh_rows, n);
                    let jz_rows = &mut ws.jz[hist * n + c0..];
                    linalg::gemm(p, hist - live, cols, 1.0, a_z, n, 1, &ws.w[live * n + c0..], n, 1, 0.0, jz_rows, n);
                }
                let end = c1.min(hist + p);
                for i in hist..hist + p {
                    if (c0..c1).contains(&i) {
                        match source {
                            Source::U => ws.jh[i * n + i] = self.decay[k],
                            Source::R => ws.jz[i * n + i] = self.decay[k],
                        }
                    }
                    let d1 = act.deriv(f.h[i]);
                    let d2z = act.second_deriv(f.h[i]) * f.z[i];
                    let row = i * n;
                    for c in row + c0..row + end {
                        let (jh, jz) = (ws.jh[c], ws.jz[c]);
                        ws.w[c] = d1 * jh;
                        ws.q[c] = d2z * jh + d1 * jz;
                    }
                }
            }
        }
    }
}

/// One Monte-Carlo sample of a layer's fields, sample-major, with optional
/// sensitivities over `((mu, k), (alpha, s))`.
#[derive(Clone, Debug)]
pub struct FieldEnsemble {
    pub h: Trajectory,
    pub z: Trajectory,
    pub g: Trajectory,
    pub phi: Trajectory,
    pub dh_dr: Option<DMatrix<f64>>,
    pub dz_dr: Option<DMatrix<f64>>,
    pub dh_du: Option<DMatrix<f64>>,
    pub dz_du: Option<DMatrix<f64>>,
    pub dg_du: Option<DMatrix<f64>>,
    pub dphi_dr: Option<DMatrix<f64>>,
}

fn to_time_major_vec(tr: &Trajectory, index: FlatIndex) -> Vec<f64> {
    let mut out = vec![0.0; index.len()];
    for mu in 0..index.samples {
        for k in 0..index.steps {
            out[index.time_major(mu, k)] = tr.at(mu, k);
        }
    }
    out
}

fn to_trajectory(v: &[f64], index: FlatIndex) -> Trajectory {
    Trajectory::from_matrix(DMatrix::from_fn(index.samples, index.steps, |mu, k| v[index.time_major(mu, k)]))
}

/// Solve one sample's fields for given sources `u` and `r`.
pub fn solve_fields(u: &Trajectory, r: &Trajectory, inputs: &LayerInputs<'_>) -> Result<FieldEnsemble> {
    let problem = LayerProblem::new(inputs)?;
    let index = problem.index;
    if u.values.shape() != (index.samples, index.steps) || r.values.shape() != u.values.shape() {
        return Err(DmftError::ShapeMismatch("sources do not match the layer's index space".into()));
    }
    let mut fields = SampleFields::new(index.len());
    problem.solve_into(&to_time_major_vec(u, index), &to_time_major_vec(r, index), &mut fields)?;
    Ok(FieldEnsemble {
        h: to_trajectory(&fields.h, index),
        z: to_trajectory(&fields.z, index),
        g: to_trajectory(&fields.g, index),
        phi: to_trajectory(&fields.phi, index),
        dh_dr: None,
        dz_dr: None,
        dh_du: None,
        dz_du: None,
        dg_du: None,
        dphi_dr: None,
    })
}

/// Fill in the sensitivities of an ensemble produced by [`solve_fields`].
pub fn propagate_jacobians(ens: &mut FieldEnsemble, inputs: &LayerInputs<'_>) -> Result<()> {
    let problem = LayerProblem::new(inputs)?;
    let index = problem.index;
    let n = index.len();
    let fields = SampleFields {
        h: to_time_major_vec(&ens.h, index),
        z: to_time_major_vec(&ens.z, index),
        g: to_time_major_vec(&ens.g, index),
        phi: to_time_major_vec(&ens.phi, index),
    };
    for source in [Source::R, Source::U] {
        let mut ws = JacobianWork::new(n);
        problem.propagate_into(&fields, source, &mut ws);
        let dh = index.to_sample_major(&ws.jh, 1.0);
        let dz = index.to_sample_major(&ws.jz, 1.0);
        match source {
            Source::R => {
                ens.dh_dr = Some(dh);
                ens.dz_dr = Some(dz);
                ens.dphi_dr = Some(index.to_sample_major(&ws.w, 1.0));
            }
            Source::U => {
                ens.dh_du = Some(dh);
                ens.dz_du = Some(dz);
                ens.dg_du = Some(index.to_sample_major(&ws.q, 1.0));
            }
        }
    }
    Ok(())
}
