use nalgebra::DMatrix;
use rayon::prelude::*;

use super::config::LAZY_THRESHOLD;
use super::fields::{FieldEnsemble, JacobianWork, LayerProblem, SampleFields, Source};
use crate::error::{DmftError, Result};
use crate::kernel::{GpSampler, Kernel, TimeGrid};
use crate::linalg::{self, FlatIndex};
use crate::rng::StreamKey;

/// Monte-Carlo samples handled by one work item.
const CHUNK: usize = 16;
/// Upper bound on memory held by partial sums awaiting reduction.
const BATCH_BYTES: usize = 256 << 20;

/// New kernel estimates from one layer's ensemble.
#[derive(Clone, Debug)]
pub struct LayerEstimate {
    pub phi: Kernel,
    pub g: Kernel,
    /// Â^l, the response of φ(h^l) to r^l, as a density in time.
    pub a: Option<Kernel>,
    /// B̂^{l-1}, the response of g^l to u^l, as a density in time.
    pub b: Option<Kernel>,
}

/// Sample averages over a set of solved ensembles.
///
/// `Φ̂ = ⟨φφᵀ⟩`, `Ĝ = ⟨ggᵀ⟩`, `Â = ⟨∂φ(h)/∂r⟩ / (γ₀ dt)` and
/// `B̂ = ⟨∂g/∂u⟩ / (γ₀ dt)`; the responses are produced only when every
/// ensemble carries the corresponding sensitivities, and are zero when γ₀ is
/// below the lazy threshold.
pub fn estimate_kernels(ensembles: &[FieldEnsemble], gamma0: f64, grid: TimeGrid) -> Result<LayerEstimate> {
    let s = ensembles.len();
    if s < 2 {
        return Err(DmftError::InsufficientSamples { required: 2, got: s });
    }
    let (p, t) = ensembles[0].h.values.shape();
    let n = p * t;
    let ids: Vec<usize> = (0..p).collect();
    let outer = |get: &dyn Fn(&FieldEnsemble) -> Vec<f64>| {
        let mut m = DMatrix::<f64>::zeros(n, n);
        for e in ensembles {
            let v = nalgebra::DVector::from_vec(get(e));
            m.ger(1.0, &v, &v, 1.0);
        }
        m /= s as f64;
        linalg::symmetrize(&mut m);
        m
    };
    let phi = outer(&|e| e.phi.flatten());
    let g = outer(&|e| e.g.flatten());
    let response = |get: &dyn Fn(&FieldEnsemble) -> Option<&DMatrix<f64>>| -> Option<DMatrix<f64>> {
        if !ensembles.iter().all(|e| get(e).is_some()) {
            return None;
        }
        if gamma0 < LAZY_THRESHOLD {
            return Some(DMatrix::zeros(n, n));
        }
        let mut m = DMatrix::zeros(n, n);
        for e in ensembles {
            m += get(e).unwrap();
        }
        Some(m / (gamma0 * s as f64 * grid.dt()))
    };
    let a = response(&|e| e.dphi_dr.as_ref());
    let b = response(&|e| e.dg_du.as_ref());
    let wrap = |name: &str, m: DMatrix<f64>| Kernel::new(name, m, ids.clone(), ids.clone(), grid);
    Ok(LayerEstimate {
        phi: wrap("phi", phi)?,
        g: wrap("g", g)?,
        a: a.map(|m| wrap("a", m)).transpose()?,
        b: b.map(|m| wrap("b", m)).transpose()?,
    })
}

/// Everything needed to sample and solve one layer's ensemble.
pub(crate) struct LayerJob<'a> {
    pub problem: &'a LayerProblem,
    pub u_sampler: &'a GpSampler,
    pub r_sampler: &'a GpSampler,
    pub u_key: StreamKey,
    pub r_key: StreamKey,
    pub n_mc: usize,
    pub need_a: bool,
    pub need_b: bool,
}

/// Raw sums over samples, time-major row-major `n x n`.
pub(crate) struct LayerSums {
    pub phi: Vec<f64>,
    pub g: Vec<f64>,
    pub a: Option<Vec<f64>>,
    pub b: Option<Vec<f64>>,
}

fn add_into(acc: &mut [f64], x: &[f64]) {
    acc.iter_mut().zip(x).for_each(|(a, b)| *a += b);
}

impl LayerSums {
    fn absorb(&mut self, other: LayerSums) {
        add_into(&mut self.phi, &other.phi);
        add_into(&mut self.g, &other.g);
        if let (Some(a), Some(o)) = (self.a.as_mut(), other.a.as_ref()) {
            add_into(a, o);
        }
        if let (Some(b), Some(o)) = (self.b.as_mut(), other.b.as_ref()) {
            add_into(b, o);
        }
    }
}

impl LayerJob<'_> {
    fn chunk(&self, start: usize, end: usize) -> Result<LayerSums> {
        let n = self.problem.dim();
        let rows = end - start;
        let mut xs = vec![0.0; rows * n];
        let mut gs = vec![0.0; rows * n];
        let mut fields = SampleFields::new(n);
        let (mut u, mut r, mut scratch) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
        let mut ws_r = self.need_a.then(|| JacobianWork::new(n));
        let mut ws_u = self.need_b.then(|| JacobianWork::new(n));
        let mut a = self.need_a.then(|| vec![0.0; n * n]);
        let mut b = self.need_b.then(|| vec![0.0; n * n]);
        for (row, idx) in (start..end).enumerate() {
            self.u_sampler.draw_into(&self.u_key, idx as u64, &mut scratch, &mut u);
            self.r_sampler.draw_into(&self.r_key, idx as u64, &mut scratch, &mut r);
            self.problem.solve_into(&u, &r, &mut fields)?;
            xs[row * n..(row + 1) * n].copy_from_slice(&fields.phi);
            gs[row * n..(row + 1) * n].copy_from_slice(&fields.g);
            if let (Some(ws), Some(acc)) = (ws_r.as_mut(), a.as_mut()) {
                self.problem.propagate_into(&fields, Source::R, ws);
                add_into(acc, &ws.w);
            }
            if let (Some(ws), Some(acc)) = (ws_u.as_mut(), b.as_mut()) {
                self.problem.propagate_into(&fields, Source::U, ws);
                add_into(acc, &ws.q);
            }
        }
        let gram = |m: &[f64]| {
            let mut out = vec![0.0; n * n];
            linalg::gemm(n, rows, n, 1.0, m, 1, n, m, n, 1, 0.0, &mut out, n);
            out
        };
        Ok(LayerSums { phi: gram(&xs), g: gram(&gs), a, b })
    }

    /// Sum over all samples. Chunks are reduced in index order, so the result
    /// does not depend on the number of worker threads.
    pub fn run(&self) -> Result<LayerSums> {
        let n = self.problem.dim();
        let n_chunks = self.n_mc.div_ceil(CHUNK);
        let per_chunk = (2 + self.need_a as usize + self.need_b as usize) * n * n * 8;
        let batch = (BATCH_BYTES / per_chunk.max(1)).max(1);
        let mut total: Option<LayerSums> = None;
        let mut first = 0;
        while first < n_chunks {
            let last = (first + batch).min(n_chunks);
            let parts: Vec<Result<LayerSums>> = (first..last)
                .into_par_iter()
                .map(|c| self.chunk(c * CHUNK, ((c + 1) * CHUNK).min(self.n_mc)))
                .collect();
            for part in parts {
                let part = part?;
                match total.as_mut() {
                    None => total = Some(part),
                    Some(t) => t.absorb(part),
                }
            }
            first = last;
        }
        total.ok_or(DmftError::InsufficientSamples { required: 2, got: 0 })
    }
}

impl LayerSums {
    /// Normalize to kernels over the sample-major index space.
    pub fn finish(self, index: FlatIndex, n_mc: usize, gamma0: f64, grid: TimeGrid, layer: usize) -> Result<LayerEstimate> {
        let ids: Vec<usize> = (0..index.samples).collect();
        let s = n_mc as f64;
        let kernel = |name: String, buf: &[f64], scale: f64, sym: bool| {
            let mut m = index.to_sample_major(buf, scale);
            if sym {
                linalg::symmetrize(&mut m);
            }
            Kernel::new(name, m, ids.clone(), ids.clone(), grid)
        };
        let resp = 1.0 / (gamma0 * s * grid.dt());
        Ok(LayerEstimate {
            phi: kernel(format!("phi{layer}"), &self.phi, 1.0 / s, true)?,
            g: kernel(format!("g{layer}"), &self.g, 1.0 / s, true)?,
            a: self.a.as_deref().map(|a| kernel(format!("a{layer}"), a, resp, false)).transpose()?,
            b: self.b.as_deref().map(|b| kernel(format!("b{}", layer - 1), b, resp, false)).transpose()?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::activation::Activation;
    use crate::kernel::Trajectory;
    use crate::saddle::fields::{propagate_jacobians, solve_fields, LayerInputs};

    fn fixture() -> (Kernel, Kernel, Kernel, Trajectory) {
        let grid = TimeGrid::new(4, 0.25).unwrap();
        let gram = DMatrix::from_row_slice(2, 2, &[1.0, 0.4, 0.4, 0.9]);
        let phi = Kernel::constant_in_time("phi", &gram, grid).unwrap();
        let g = Kernel::constant_in_time("g", &DMatrix::from_row_slice(2, 2, &[0.7, 0.2, 0.2, 0.6]), grid).unwrap();
        let a = Kernel::square("a", DMatrix::from_fn(8, 8, |i, j| 0.1 * ((i + 2 * j) % 5) as f64 - 0.2), 2, grid).unwrap();
        let delta = Trajectory::from_matrix(DMatrix::from_fn(1, 4, |_, k| 1.0 - 0.2 * k as f64));
        (phi, g, a, delta)
    }

    fn time_major(k: &Kernel, index: FlatIndex) -> DMatrix<f64> {
        DMatrix::from_row_slice(index.len(), index.len(), &index.to_time_major(&k.values))
    }

    #[test]
    fn batched_sums_match_per_sample_estimates() {
        let (phi, g, a, delta) = fixture();
        let inputs = LayerInputs {
            phi_prev: &phi,
            g_next: &g,
            a_prev: Some(&a),
            b_this: Some(&a),
            delta: &delta,
            activation: Activation::Tanh,
            gamma0: 1.3,
            lambda_wd: 0.0,
            use_bias: false,
        };
        let problem = LayerProblem::new(&inputs).unwrap();
        let index = problem.index;
        let u_sampler = GpSampler::new(&time_major(&phi, index)).unwrap();
        let r_sampler = GpSampler::new(&time_major(&g, index)).unwrap();
        let (u_key, r_key) = (StreamKey::new(3).role(1), StreamKey::new(3).role(2));
        let n_mc = 37;
        let job = LayerJob {
            problem: &problem,
            u_sampler: &u_sampler,
            r_sampler: &r_sampler,
            u_key,
            r_key,
            n_mc,
            need_a: true,
            need_b: true,
        };
        let fast = job.run().unwrap().finish(index, n_mc, 1.3, phi.grid, 2).unwrap();

        let to_traj = |v: Vec<f64>| {
            Trajectory::from_matrix(DMatrix::from_fn(index.samples, index.steps, |mu, k| v[index.time_major(mu, k)]))
        };
        let ensembles: Vec<FieldEnsemble> = (0..n_mc as u64)
            .map(|i| {
                let u = to_traj(u_sampler.draw(&u_key, i));
                let r = to_traj(r_sampler.draw(&r_key, i));
                let mut e = solve_fields(&u, &r, &inputs).unwrap();
                propagate_jacobians(&mut e, &inputs).unwrap();
                e
            })
            .collect();
        let slow = estimate_kernels(&ensembles, 1.3, phi.grid).unwrap();
        let close = |x: &Kernel, y: &Kernel| (&x.values - &y.values).abs().max() < 1e-12;
        assert!(close(&fast.phi, &slow.phi));
        assert!(close(&fast.g, &slow.g));
        assert!(close(fast.a.as_ref().unwrap(), slow.a.as_ref().unwrap()));
        assert!(close(fast.b.as_ref().unwrap(), slow.b.as_ref().unwrap()));
        assert_eq!(fast.a.unwrap().name, "a2");
        assert_eq!(fast.b.unwrap().name, "b1");
    }

    #[test]
    fn thread_count_does_not_change_sums() {
        let (phi, g, _, delta) = fixture();
        let inputs = LayerInputs {
            phi_prev: &phi,
            g_next: &g,
            a_prev: None,
            b_this: None,
            delta: &delta,
            activation: Activation::Tanh,
            gamma0: 1.0,
            lambda_wd: 0.0,
            use_bias: false,
        };
        let problem = LayerProblem::new(&inputs).unwrap();
        let u_sampler = GpSampler::new(&time_major(&phi, problem.index)).unwrap();
        let r_sampler = GpSampler::new(&time_major(&g, problem.index)).unwrap();
        let job = LayerJob {
            problem: &problem,
            u_sampler: &u_sampler,
            r_sampler: &r_sampler,
            u_key: StreamKey::new(9),
            r_key: StreamKey::new(10),
            n_mc: 100,
            need_a: true,
            need_b: false,
        };
        let run_with = |threads: usize| {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
            pool.install(|| job.run().unwrap())
        };
        let (one, four) = (run_with(1), run_with(4));
        assert_eq!(one.phi, four.phi);
        assert_eq!(one.g, four.g);
        assert_eq!(one.a, four.a);
        assert!(four.b.is_none());
    }

    #[test]
    fn lazy_ensembles_have_zero_responses_and_need_two_samples() {
        let (phi, g, _, delta) = fixture();
        let inputs = LayerInputs {
            phi_prev: &phi,
            g_next: &g,
            a_prev: None,
            b_this: None,
            delta: &delta,
            activation: Activation::Tanh,
            gamma0: 0.0,
            lambda_wd: 0.0,
            use_bias: false,
        };
        let u = Trajectory::from_matrix(DMatrix::from_element(2, 4, 0.3));
        let mut e = solve_fields(&u, &u, &inputs).unwrap();
        propagate_jacobians(&mut e, &inputs).unwrap();
        assert!(matches!(
            estimate_kernels(std::slice::from_ref(&e), 0.0, phi.grid),
            Err(DmftError::InsufficientSamples { .. })
        ));
        let est = estimate_kernels(&[e.clone(), e], 0.0, phi.grid).unwrap();
        assert_eq!(est.a.unwrap().values.max(), 0.0);
        assert_eq!(est.b.unwrap().values.abs().max(), 0.0);
    }
}
