use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::config::{DmftConfig, NoiseMode};
use super::estimate::{LayerEstimate, LayerJob};
use super::fields::{LayerInputs, LayerProblem};
use crate::approx::{static_kernels, static_kernels_with_bias};
use crate::error::{DmftError, Result};
use crate::kernel::{
    integrate_predictions_with_decay, ntk_assemble, ntk_assemble_with_bias, GpSampler, Kernel, SampleSet, TimeGrid,
    Trajectory,
};
use crate::linalg::{self, FlatIndex};
use crate::rng::{StreamKey, ROLE_BACKWARD, ROLE_FORWARD};

/// One outer iteration's record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationDiagnostics {
    pub iteration: usize,
    /// Largest relative kernel change of the iteration.
    pub max_change: f64,
    pub changes: BTreeMap<String, f64>,
    /// Mean train loss at the last grid point, computed from the kernels the iteration started with.
    pub final_loss: f64,
    /// Trace of the train block of `K(t_T, t_T)`.
    pub ntk_trace: f64,
}

/// Converged (or flagged) DMFT order parameters.
#[derive(Clone, Debug)]
pub struct DmftState {
    pub config: DmftConfig,
    pub grid: TimeGrid,
    pub n_train: usize,
    pub input_gram: DMatrix<f64>,
    pub targets: DVector<f64>,
    /// Φ^0..Φ^L; Φ^0 is the input gram on every time pair.
    pub phi: Vec<Kernel>,
    /// G^1..G^{L+1}; the last entry is all ones.
    pub g: Vec<Kernel>,
    /// A^0..A^L; A^0 and A^L stay zero.
    pub a: Vec<Kernel>,
    /// B^0..B^L; B^0 and B^L stay zero.
    pub b: Vec<Kernel>,
    /// Predictions on all samples.
    pub f: Trajectory,
    /// Error signal on the train samples.
    pub delta: Trajectory,
    pub diagnostics: Vec<IterationDiagnostics>,
    pub iterations: usize,
    pub converged: bool,
}

impl DmftState {
    pub fn depth(&self) -> usize {
        self.config.depth
    }

    pub fn phi(&self, layer: usize) -> &Kernel {
        &self.phi[layer]
    }

    pub fn g(&self, layer: usize) -> &Kernel {
        &self.g[layer - 1]
    }

    pub fn a(&self, layer: usize) -> &Kernel {
        &self.a[layer]
    }

    pub fn b(&self, layer: usize) -> &Kernel {
        &self.b[layer]
    }

    pub fn ntk(&self) -> Result<Kernel> {
        let l = self.depth();
        if self.config.use_bias {
            ntk_assemble_with_bias(&self.phi[1..=l], &self.g[..l], &self.input_gram)
        } else {
            ntk_assemble(&self.phi[1..=l], &self.g[..l], &self.input_gram)
        }
    }

    /// Equal-time NTK blocks `K(t_k, t_k)` over all samples.
    pub fn ntk_diagonal(&self) -> Vec<DMatrix<f64>> {
        let l = self.depth();
        let shift = if self.config.use_bias { 1.0 } else { 0.0 };
        (0..self.grid.n_steps())
            .map(|k| {
                let mut total = self.phi[l].equal_time(k);
                for layer in 0..l {
                    let below = if layer == 0 { self.input_gram.clone() } else { self.phi[layer].equal_time(k) };
                    total += self.g[layer].equal_time(k).component_mul(&below.add_scalar(shift));
                }
                total
            })
            .collect()
    }

    /// Mean train loss at each grid point.
    pub fn loss_curve(&self) -> Vec<f64> {
        let y = &self.targets;
        (0..self.grid.n_steps())
            .map(|k| self.config.loss.mean((0..self.n_train).map(|mu| self.f.at(mu, k)), y))
            .collect()
    }

    /// Diagnostics as JSON lines.
    pub fn diagnostics_jsonl(&self) -> String {
        self.diagnostics
            .iter()
            .map(|d| serde_json::to_string(d).expect("diagnostics serialize"))
            .collect::<Vec<_>>()
            .join("\n")
    }
}

/// The damped alternating Monte-Carlo fixed-point iteration.
#[derive(Clone, Debug)]
pub struct DmftSolver {
    state: DmftState,
    with_responses: bool,
}

impl DmftSolver {
    /// Start from the lazy static kernels with `A = B = 0`. With
    /// `with_responses = false`, A and B stay pinned at zero.
    pub fn new(cfg: &DmftConfig, data: &SampleSet, grid: TimeGrid, with_responses: bool) -> Result<Self> {
        cfg.validate()?;
        let kx = data.input_gram().clone();
        let depth = cfg.depth;
        let statics = if cfg.use_bias {
            static_kernels_with_bias(cfg.activation, &kx, depth, cfg.n_quad)?
        } else {
            static_kernels(cfg.activation, &kx, depth, cfg.n_quad)?
        };
        let (phi, g) = statics.on_grid(grid)?;
        let n = data.n_total();
        let zeros = |name: String| Kernel::zeros(name, n, grid);
        let a = (0..=depth).map(|l| zeros(format!("a{l}"))).collect();
        let b = (0..=depth).map(|l| zeros(format!("b{l}"))).collect();
        let p = data.n_train();
        let state = DmftState {
            config: cfg.clone(),
            grid,
            n_train: p,
            input_gram: kx,
            targets: data.targets().clone(),
            phi,
            g,
            a,
            b,
            f: Trajectory::zeros(n, grid.n_steps()),
            delta: Trajectory::zeros(p, grid.n_steps()),
            diagnostics: Vec::new(),
            iterations: 0,
            converged: false,
        };
        let mut solver = Self { state, with_responses };
        solver.refresh_predictions()?;
        Ok(solver)
    }

    /// Replace the initial kernels with those of an earlier solution on the
    /// same samples, at another γ₀ or on another grid with the same spacing.
    /// Kernels are held constant past the earlier horizon and responses are
    /// zero there.
    pub fn warm_start(&mut self, prev: &DmftState) -> Result<()> {
        if prev.depth() != self.state.depth() || prev.input_gram.shape() != self.state.input_gram.shape() {
            return Err(DmftError::ShapeMismatch(format!(
                "warm start from depth {} on {} samples into depth {} on {} samples",
                prev.depth(),
                prev.input_gram.nrows(),
                self.state.depth(),
                self.state.input_gram.nrows()
            )));
        }
        let grid = self.state.grid;
        let moved = |ks: &[Kernel], hold: bool| ks.iter().map(|k| k.on_grid(grid, hold)).collect::<Result<Vec<_>>>();
        self.state.phi = moved(&prev.phi, true)?;
        self.state.g = moved(&prev.g, true)?;
        if self.with_responses {
            self.state.a = moved(&prev.a, false)?;
            self.state.b = moved(&prev.b, false)?;
        }
        self.refresh_predictions()
    }

    /// A fresh solver on another grid with the same spacing, started from the
    /// current kernels.
    fn on_grid(&self, grid: TimeGrid) -> Result<Self> {
        let mut state = self.state.clone();
        state.grid = grid;
        state.diagnostics.clear();
        state.iterations = 0;
        state.converged = false;
        let mut solver = Self { state, with_responses: self.with_responses };
        solver.warm_start(&self.state)?;
        Ok(solver)
    }

    pub fn state(&self) -> &DmftState {
        &self.state
    }

    pub fn into_state(self) -> DmftState {
        self.state
    }

    fn refresh_predictions(&mut self) -> Result<()> {
        let decay = self.state.config.decay_rate().unwrap_or(0.0);
        let blocks = self.state.ntk_diagonal();
        let (f, delta) =
            integrate_predictions_with_decay(&blocks, &self.state.targets, self.state.config.loss, &self.state.grid, decay)?;
        self.state.f = f;
        self.state.delta = delta;
        Ok(())
    }

    fn key(&self, layer: usize, role: u64) -> StreamKey {
        let cfg = &self.state.config;
        let iteration = match cfg.noise {
            NoiseMode::Frozen => 0,
            NoiseMode::Fresh => self.state.iterations as u64 + 1,
        };
        StreamKey::new(cfg.seed).iteration(iteration).layer(layer as u64).role(role)
    }

    fn estimate_layer(&self, layer: usize) -> Result<LayerEstimate> {
        let st = &self.state;
        let cfg = &st.config;
        let depth = cfg.depth;
        let inputs = LayerInputs {
            phi_prev: &st.phi[layer - 1],
            g_next: &st.g[layer],
            a_prev: (self.with_responses && layer >= 2).then(|| &st.a[layer - 1]),
            b_this: (self.with_responses && layer < depth).then(|| &st.b[layer]),
            delta: &st.delta,
            activation: cfg.activation,
            gamma0: cfg.gamma0,
            lambda_wd: cfg.lambda_wd,
            use_bias: cfg.use_bias,
        };
        let problem = LayerProblem::new(&inputs)?;
        let index: FlatIndex = problem.index;
        let time_major_cov = |k: &Kernel, shift: f64| {
            let n = index.len();
            let mut buf = index.to_time_major(&k.values);
            if shift != 0.0 {
                buf.iter_mut().for_each(|v| *v += shift);
            }
            DMatrix::from_row_slice(n, n, &buf)
        };
        let shift = if cfg.use_bias { 1.0 } else { 0.0 };
        let u_sampler = GpSampler::new(&time_major_cov(&st.phi[layer - 1], shift))?;
        let r_sampler = GpSampler::new(&time_major_cov(&st.g[layer], 0.0))?;
        let job = LayerJob {
            problem: &problem,
            u_sampler: &u_sampler,
            r_sampler: &r_sampler,
            u_key: self.key(layer, ROLE_FORWARD),
            r_key: self.key(layer, ROLE_BACKWARD),
            n_mc: cfg.n_mc,
            need_a: self.with_responses && layer < depth,
            need_b: self.with_responses && layer >= 2,
        };
        job.run()?.finish(index, cfg.n_mc, cfg.gamma0, st.grid, layer)
    }

    /// One outer iteration: predictions from the current kernels, new
    /// ensembles for every layer, then the damped update. Returns the largest
    /// relative kernel change.
    pub fn step(&mut self) -> Result<f64> {
        self.refresh_predictions()?;
        let depth = self.state.config.depth;
        let estimates = (1..=depth).map(|l| self.estimate_layer(l)).collect::<Result<Vec<_>>>()?;
        let beta = self.state.config.beta;
        let mut changes = BTreeMap::new();
        let mut damp = |old: &mut Kernel, new: &Kernel, sym: bool, name: String| {
            let mut next = &old.values * (1.0 - beta) + &new.values * beta;
            if sym {
                linalg::symmetrize(&mut next);
            }
            changes.insert(name, linalg::relative_change(&next, &old.values));
            old.values = next;
        };
        for (i, est) in estimates.iter().enumerate() {
            let l = i + 1;
            damp(&mut self.state.phi[l], &est.phi, true, format!("phi{l}"));
            damp(&mut self.state.g[l - 1], &est.g, true, format!("g{l}"));
            if let Some(a) = &est.a {
                damp(&mut self.state.a[l], a, false, format!("a{l}"));
            }
            if let Some(b) = &est.b {
                damp(&mut self.state.b[l - 1], b, false, format!("b{}", l - 1));
            }
        }
        let max_change = changes.values().cloned().fold(0.0, f64::max);
        let y = &self.state.targets;
        let last = self.state.grid.n_steps() - 1;
        let p = self.state.n_train;
        let final_loss = self.state.config.loss.mean((0..p).map(|mu| self.state.f.at(mu, last)), y);
        let ntk_last = self.state.ntk_diagonal().pop().expect("grid has at least one step");
        let ntk_trace = (0..p).map(|mu| ntk_last[(mu, mu)]).sum();
        self.state.iterations += 1;
        self.state.diagnostics.push(IterationDiagnostics {
            iteration: self.state.iterations,
            max_change,
            changes,
            final_loss,
            ntk_trace,
        });
        Ok(max_change)
    }

    /// Iterate until the largest relative change drops below `tol` or
    /// `max_iters` is reached; non-convergence is flagged, not an error.
    pub fn run(mut self) -> Result<DmftState> {
        let cfg = self.state.config.clone();
        if cfg.is_lazy() {
            self.state.iterations = 1;
            self.state.converged = true;
            let last = self.state.grid.n_steps() - 1;
            let p = self.state.n_train;
            let final_loss = cfg.loss.mean((0..p).map(|mu| self.state.f.at(mu, last)), &self.state.targets);
            let ntk_last = self.state.ntk_diagonal().pop().expect("grid has at least one step");
            self.state.diagnostics.push(IterationDiagnostics {
                iteration: 1,
                max_change: 0.0,
                changes: BTreeMap::new(),
                final_loss,
                ntk_trace: (0..p).map(|mu| ntk_last[(mu, mu)]).sum(),
            });
            return Ok(self.state);
        }
        let total = self.state.grid.n_steps();
        let chunk = if cfg.horizon_chunk == 0 { total } else { cfg.horizon_chunk.min(total) };
        let dt = self.state.grid.dt();
        let mut stage = self.on_grid(TimeGrid::new(chunk, dt)?)?;
        let mut history = Vec::new();
        let mut iterations = 0;
        loop {
            stage.iterate(cfg.max_iters)?;
            iterations += stage.state.iterations;
            history.append(&mut stage.state.diagnostics);
            let steps = stage.state.grid.n_steps();
            if steps == total {
                break;
            }
            stage = stage.on_grid(TimeGrid::new((steps + chunk).min(total), dt)?)?;
        }
        stage.state.diagnostics = history;
        stage.state.iterations = iterations;
        stage.refresh_predictions()?;
        Ok(stage.state)
    }

    fn iterate(&mut self, max_iters: usize) -> Result<()> {
        while self.state.iterations < max_iters {
            if self.step()? < self.state.config.tol {
                self.state.converged = true;
                break;
            }
        }
        Ok(())
    }
}

/// Full DMFT with response functions.
pub fn dmft_solve(cfg: &DmftConfig, data: &SampleSet, grid: TimeGrid) -> Result<DmftState> {
    DmftSolver::new(cfg, data, grid, true)?.run()
}
