use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use dmft_core::approx::{gradient_independence_solve, perturbative_linear_ntk, static_kernels, static_kernels_with_bias};
use dmft_core::kernel::io::write_kernel;
use dmft_core::kernel::{alignment, integrate_predictions, ntk_assemble, ntk_assemble_with_bias};
use dmft_core::linear::{linear_solve, resolvent_residual, two_layer_general, LinearConfig};
use dmft_core::reference::{measure_kernels, train, Mlp, TrainOptions};
use dmft_core::saddle::{dmft_solve, representer_check, DmftState};
use dmft_core::{Kernel, SampleSet, TimeGrid, Trajectory};
use nalgebra::DMatrix;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::config::{ExperimentConfig, Mode, NetworkSpec};
use crate::data::load_data;

/// What a finished experiment reports back to the caller.
#[derive(Debug)]
pub struct Outcome {
    pub converged: bool,
    pub report: Value,
    pub files: Vec<PathBuf>,
}

struct Artifacts {
    dir: PathBuf,
    files: Vec<PathBuf>,
}

impl Artifacts {
    fn new(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).with_context(|| format!("creating output directory {}", dir.display()))?;
        Ok(Self { dir: dir.to_path_buf(), files: Vec::new() })
    }

    fn path(&mut self, name: &str) -> PathBuf {
        let path = self.dir.join(name);
        self.files.push(path.clone());
        path
    }

    fn kernel(&mut self, prefix: &str, k: &Kernel) -> Result<()> {
        let path = self.path(&format!("{prefix}{}.kern", k.name));
        write_kernel(k, &path).with_context(|| format!("writing {}", path.display()))
    }

    fn table(&mut self, name: &str, header: &[String], rows: impl Iterator<Item = Vec<String>>) -> Result<()> {
        let path = self.path(name);
        let mut w = csv::Writer::from_path(&path).with_context(|| format!("writing {}", path.display()))?;
        w.write_record(header)?;
        for row in rows {
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    fn losses(&mut self, grid: &TimeGrid, columns: &[(&str, &[f64])]) -> Result<()> {
        let mut header = vec!["step".to_string(), "t".to_string()];
        header.extend(columns.iter().map(|(name, _)| name.to_string()));
        let rows = (0..grid.n_steps()).map(|k| {
            let mut row = vec![k.to_string(), grid.time(k).to_string()];
            row.extend(columns.iter().map(|(_, v)| v[k].to_string()));
            row
        });
        self.table("loss.csv", &header, rows)
    }

    fn predictions(&mut self, name: &str, grid: &TimeGrid, f: &Trajectory) -> Result<()> {
        let mut header = vec!["step".to_string(), "t".to_string()];
        header.extend((0..f.n_samples()).map(|mu| format!("f{mu}")));
        let rows = (0..grid.n_steps()).map(|k| {
            let mut row = vec![k.to_string(), grid.time(k).to_string()];
            row.extend((0..f.n_samples()).map(|mu| f.at(mu, k).to_string()));
            row
        });
        self.table(name, &header, rows)
    }

    fn report(&mut self, report: &Value) -> Result<()> {
        let path = self.path("report.json");
        let text = serde_json::to_string_pretty(report)? + "\n";
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
    }
}

fn config_hash(cfg: &ExperimentConfig) -> Result<String> {
    let canonical = serde_json::to_vec(cfg)?;
    Ok(Sha256::digest(&canonical).iter().map(|b| format!("{b:02x}")).collect())
}

fn matrix_json(m: &DMatrix<f64>) -> Value {
    json!(m.row_iter().map(|r| r.iter().cloned().collect::<Vec<_>>()).collect::<Vec<_>>())
}

/// Run one experiment, writing every artifact into `out`.
pub fn run(cfg: &ExperimentConfig, out: &Path) -> Result<Outcome> {
    cfg.validate()?;
    let data = load_data(&cfg.data).context("loading data")?;
    let grid = cfg.grid.grid()?;
    let mut art = Artifacts::new(out)?;
    let (converged, results) = match cfg.mode {
        Mode::Dmft | Mode::GradIndep => {
            let st = if cfg.mode == Mode::Dmft {
                dmft_solve(&cfg.dmft, &data, grid)
            } else {
                gradient_independence_solve(&cfg.dmft, &data, grid)
            }
            .context("DMFT solve")?;
            write_dmft(&mut art, "", &st, cfg.mode == Mode::Dmft)?;
            art.losses(&grid, &[("loss", &st.loss_curve())])?;
            art.predictions("preds.csv", &grid, &st.f)?;
            let mut results = dmft_summary(&st);
            if cfg.dmft.lambda_wd > 0.0 && data.n_test() > 0 {
                if let Some(kappa) = cfg.dmft.activation.network_degree(cfg.dmft.depth) {
                    let rep = representer_check(&st, data.targets(), cfg.dmft.lambda_wd, kappa)?;
                    results["representer"] = serde_json::to_value(rep)?;
                }
            }
            (st.converged, results)
        }
        Mode::Linear => {
            let st = linear_solve(&cfg.linear, &data, grid).context("closed-form solve")?;
            for l in 1..=st.depth() {
                art.kernel("", &st.h_kernel(l))?;
                art.kernel("", &st.g_kernel(l))?;
            }
            art.kernel("", &st.ntk())?;
            let loss = st.loss_curve();
            art.losses(&grid, &[("loss", &loss)])?;
            art.predictions("preds.csv", &grid, &st.f)?;
            let residuals: Vec<f64> = (1..st.depth()).map(|l| resolvent_residual(&st, l)).collect();
            let results = json!({
                "iterations": st.iterations,
                "changes": st.changes,
                "final_loss": loss.last(),
                "resolvent_residuals": residuals,
            });
            (st.converged, results)
        }
        Mode::TwoLayer => {
            let y = data.targets();
            let traj = two_layer_general(cfg.linear.gamma0, &data.train_gram(), y, &grid).context("two-layer ODE")?;
            let p = y.len();
            let f = Trajectory::from_matrix(DMatrix::from_fn(p, grid.n_steps(), |mu, k| y[mu] - traj.delta[k][mu]));
            let loss: Vec<f64> =
                (0..grid.n_steps()).map(|k| cfg.linear.loss.mean((0..p).map(|mu| f.at(mu, k)), y)).collect();
            art.losses(&grid, &[("loss", &loss)])?;
            art.predictions("preds.csv", &grid, &f)?;
            let last = grid.n_steps() - 1;
            let results = json!({
                "final_loss": loss[last],
                "final_h": matrix_json(&traj.h[last]),
                "final_g": traj.g[last],
            });
            (true, results)
        }
        Mode::Static => {
            let c = &cfg.dmft;
            let kx = data.input_gram();
            let statics = if c.use_bias {
                static_kernels_with_bias(c.activation, kx, c.depth, c.n_quad)?
            } else {
                static_kernels(c.activation, kx, c.depth, c.n_quad)?
            };
            let (phi, g) = statics.on_grid(grid)?;
            let ntk = if c.use_bias {
                ntk_assemble_with_bias(&phi[1..], &g[..c.depth], kx)?
            } else {
                ntk_assemble(&phi[1..], &g[..c.depth], kx)?
            };
            for l in 1..=c.depth {
                art.kernel("", &phi[l])?;
                art.kernel("", &g[l - 1])?;
            }
            art.kernel("", &ntk)?;
            let blocks: Vec<DMatrix<f64>> = vec![ntk.block(0, 0); grid.n_steps()];
            let (f, _) = integrate_predictions(&blocks, data.targets(), c.loss, &grid)?;
            let p = data.n_train();
            let loss: Vec<f64> =
                (0..grid.n_steps()).map(|k| c.loss.mean((0..p).map(|mu| f.at(mu, k)), data.targets())).collect();
            art.losses(&grid, &[("loss", &loss)])?;
            art.predictions("preds.csv", &grid, &f)?;
            (true, json!({ "final_loss": loss.last(), "ntk": matrix_json(&ntk.block(0, 0)) }))
        }
        Mode::Perturb => perturb(cfg, &data, grid, &mut art)?,
        Mode::NnTrain => {
            let net = cfg.network.as_ref().expect("validated");
            let (log, kernels) = train_network(net, &data, grid)?;
            for l in 1..=net.mlp.depth {
                art.kernel("", kernels.phi(l))?;
                art.kernel("", kernels.g(l))?;
            }
            art.kernel("", &kernels.ntk)?;
            let rows = log.loss.iter().map(|r| vec![r.step.to_string(), r.t.to_string(), r.loss.to_string()]);
            art.table("loss.csv", &["step".into(), "t".into(), "loss".into()], rows)?;
            art.predictions("preds.csv", &grid, &log.f)?;
            let results = json!({
                "final_loss": log.loss.last().map(|r| r.loss),
                "learning_rate": log.eta0,
                "steps": log.loss.len() - 1,
            });
            (true, results)
        }
        Mode::Compare => {
            let net = cfg.network.as_ref().expect("validated");
            let st = dmft_solve(&cfg.dmft, &data, grid).context("DMFT solve")?;
            let (log, kernels) = train_network(net, &data, grid)?;
            write_dmft(&mut art, "dmft_", &st, true)?;
            let mut layers = Vec::new();
            for l in 1..=cfg.dmft.depth {
                art.kernel("nn_", kernels.phi(l))?;
                art.kernel("nn_", kernels.g(l))?;
                layers.push(json!({
                    "layer": l,
                    "phi": alignment(st.phi(l), kernels.phi(l))?,
                    "g": alignment(st.g(l), kernels.g(l))?,
                }));
            }
            art.kernel("nn_", &kernels.ntk)?;
            let dmft_loss = st.loss_curve();
            let nn_loss = log.loss_curve();
            art.losses(&grid, &[("dmft", &dmft_loss), ("nn", &nn_loss)])?;
            art.predictions("preds.csv", &grid, &st.f)?;
            art.predictions("nn_preds.csv", &grid, &log.f)?;
            let (a, b) = (*dmft_loss.last().unwrap(), *nn_loss.last().unwrap());
            let mut results = dmft_summary(&st);
            results["alignments"] = json!(layers);
            results["ntk_alignment"] = json!(alignment(&st.ntk()?, &kernels.ntk)?);
            results["final_loss_nn"] = json!(b);
            results["final_loss_relative_gap"] = json!((a - b).abs() / b.abs().max(f64::MIN_POSITIVE));
            (st.converged, results)
        }
    };
    let report = json!({
        "version": dmft_core::VERSION,
        "mode": cfg.mode.name(),
        "config": cfg,
        "config_sha256": config_hash(cfg)?,
        "seeds": {
            "solver": cfg.dmft.seed,
            "network": cfg.network.as_ref().map(|n| n.mlp.seed),
            "data": cfg.data.seed(),
        },
        "converged": converged,
        "results": results,
    });
    art.report(&report)?;
    Ok(Outcome { converged, report, files: art.files })
}

fn write_dmft(art: &mut Artifacts, prefix: &str, st: &DmftState, responses: bool) -> Result<()> {
    let depth = st.depth();
    for l in 1..=depth {
        art.kernel(prefix, st.phi(l))?;
        art.kernel(prefix, st.g(l))?;
    }
    if responses {
        for l in 1..depth {
            art.kernel(prefix, st.a(l))?;
            art.kernel(prefix, st.b(l))?;
        }
    }
    art.kernel(prefix, &st.ntk()?)
}

fn dmft_summary(st: &DmftState) -> Value {
    json!({
        "iterations": st.iterations,
        "final_loss": st.loss_curve().last(),
        "diagnostics": st.diagnostics,
    })
}

fn train_network(
    net: &NetworkSpec,
    data: &SampleSet,
    grid: TimeGrid,
) -> Result<(dmft_core::reference::TrainLog, dmft_core::reference::EmpiricalKernels)> {
    let dim = data.inputs_or_factor()?.ncols();
    let mut mlp = Mlp::new(&net.mlp, dim)?;
    let opts = TrainOptions { steps_per_interval: net.steps_per_interval, log_activations: true };
    let log = train(&mut mlp, data, grid, opts).context("training the reference network")?;
    let kernels = measure_kernels(&log)?;
    Ok((log, kernels))
}

fn perturb(cfg: &ExperimentConfig, data: &SampleSet, grid: TimeGrid, art: &mut Artifacts) -> Result<(bool, Value)> {
    let spec = cfg.perturb.as_ref().expect("validated");
    let kx = data.train_gram();
    let y = data.targets();
    let train_only = SampleSet::from_gram(kx.clone(), y.len(), y.clone())?;
    let mut converged = true;
    let mut entries = Vec::new();
    let mut residuals = Vec::new();
    for (i, &gamma0) in spec.gamma0s.iter().enumerate() {
        let pert = perturbative_linear_ntk(&kx, y, &grid, gamma0, cfg.linear.depth, spec.scheme.into())?;
        let full = linear_solve(&LinearConfig { gamma0, ..cfg.linear.clone() }, &train_only, grid)
            .with_context(|| format!("closed-form solve at gamma0 = {gamma0}"))?;
        converged &= full.converged;
        let reference = full.ntk();
        let residual = (&reference.values - &pert.ntk.values).norm() / reference.values.norm();
        art.kernel(&format!("perturb{i}_"), &pert.ntk)?;
        art.kernel(&format!("linear{i}_"), &reference)?;
        residuals.push((gamma0, residual));
        entries.push(json!({ "gamma0": gamma0, "residual": residual, "converged": full.converged }));
    }
    residuals.sort_by(|a, b| b.0.total_cmp(&a.0));
    let ratios: Vec<Value> = residuals
        .windows(2)
        .map(|w| json!({ "from": w[0].0, "to": w[1].0, "ratio": w[0].1 / w[1].1 }))
        .collect();
    Ok((converged, json!({ "scheme": spec.scheme, "residuals": entries, "ratios": ratios })))
}
