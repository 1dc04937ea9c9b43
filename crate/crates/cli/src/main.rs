use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use dmft_cli::{load_data, run, ExperimentConfig};

#[derive(Parser)]
#[command(name = "dmft", version, about = "Run DMFT, closed-form and finite-width experiments from a JSON config")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment.
    Solve {
        #[arg(long)]
        config: PathBuf,
        /// Output directory (default: the config's `output`, or `out` beside the config).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Seed for the Monte-Carlo solver and the reference network.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, env = "DMFT_THREADS")]
        threads: Option<usize>,
        /// Validate the config and the data, then stop.
        #[arg(long)]
        dry_run: bool,
    },
}

fn solve(config: PathBuf, out: Option<PathBuf>, seed: Option<u64>, threads: Option<usize>, dry_run: bool) -> Result<ExitCode> {
    let mut cfg = ExperimentConfig::load(&config)?;
    if let Some(seed) = seed {
        cfg.override_seed(seed);
    }
    if let Some(out) = out {
        cfg.output = Some(out);
    }
    cfg.validate()?;
    if dry_run {
        let data = load_data(&cfg.data)?;
        println!(
            "config ok: mode {}, {} train + {} test samples, {} steps of {}",
            cfg.mode.name(),
            data.n_train(),
            data.n_test(),
            cfg.grid.n_steps,
            cfg.grid.dt
        );
        return Ok(ExitCode::SUCCESS);
    }
    if let Some(k) = threads {
        rayon::ThreadPoolBuilder::new().num_threads(k).build_global().context("configuring the thread pool")?;
    }
    let dir = cfg.output.clone().expect("load sets an output directory");
    let outcome = run(&cfg, &dir)?;
    println!("{} finished; {} files in {}", cfg.mode.name(), outcome.files.len(), dir.display());
    if outcome.converged {
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!("warning: the solver did not converge; see report.json");
        Ok(ExitCode::from(2))
    }
}

fn main() -> ExitCode {
    let Cli { command } = Cli::parse();
    let result = match command {
        Command::Solve { config, out, seed, threads, dry_run } => solve(config, out, seed, threads, dry_run),
    };
    result.unwrap_or_else(|e| {
        eprintln!("error: {e:#}");
        ExitCode::FAILURE
    })
}
