//! `regae <command> [--config FILE] [--seed N] [--out DIR] [overrides]`.
//!
//! Exit codes: 0 success, 1 computational failure, 2 usage error.
//! `REGAE_THREADS` caps the worker pool.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

pub mod commands;
pub mod config;
pub mod svg;
pub mod validate;

pub use config::{derive_seed, Experiment, ExperimentConfig};

/// Bad invocation or configuration; maps to exit code 2.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

pub const THREADS_ENV: &str = "REGAE_THREADS";

#[derive(Debug, Parser)]
#[command(name = "regae", version, about = "Score, Hessian and sampling experiments with regularized auto-encoders")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// TOML experiment config.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (created if missing).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write SVG renderings.
    #[arg(long)]
    svg: bool,
}

#[derive(Debug, Args)]
struct TrainOverrides {
    /// Training iterations.
    #[arg(long)]
    iters: Option<usize>,
    /// Hidden units.
    #[arg(long)]
    hidden: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Score estimates of the 1-D example from both optimal solvers.
    Fig3 {
        #[command(flatten)]
        common: Common,
        /// Noise levels, comma separated.
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
        sigma: Option<Vec<f64>>,
    },
    /// Spiral denoising auto-encoder and its reconstruction field.
    Fig4 {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        train: TrainOverrides,
        /// Skip training and use this checkpoint.
        #[arg(long)]
        load: Option<PathBuf>,
    },
    /// Sampling on a curve in ten dimensions.
    Fig5 {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        train: TrainOverrides,
    },
    /// Spurious attractors of an undertrained model.
    Fig6 {
        #[command(flatten)]
        common: Common,
    },
    /// Run a validation suite and write a JSON report.
    Validate {
        /// scores, proposition1, hessian, ball, local-mean, sampler or all.
        suite: String,
        #[command(flatten)]
        common: Common,
    },
}

impl Command {
    fn experiment(&self) -> Experiment {
        match self {
            Command::Fig3 { .. } => Experiment::Fig3,
            Command::Fig4 { .. } => Experiment::Fig4,
            Command::Fig5 { .. } => Experiment::Fig5,
            Command::Fig6 { .. } => Experiment::Fig6,
            Command::Validate { .. } => Experiment::Validate,
        }
    }

    fn common(&self) -> &Common {
        match self {
            Command::Fig3 { common, .. }
            | Command::Fig4 { common, .. }
            | Command::Fig5 { common, .. }
            | Command::Fig6 { common }
            | Command::Validate { common, .. } => common,
        }
    }
}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn parse_threads(v: &str) -> Result<usize> {
    v.trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| usage(format!("{THREADS_ENV} must be a positive integer, got '{v}'")))
}

fn init_threads() -> Result<()> {
    let Ok(v) = std::env::var(THREADS_ENV) else { return Ok(()) };
    let n = parse_threads(&v)?;
    // already built (e.g. a second call in-process): keep the existing pool
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

fn load_config(cmd: &Command) -> Result<ExperimentConfig> {
    let common = cmd.common();
    let mut cfg = match &common.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| usage(format!("reading config {}: {e}", path.display())))?;
            ExperimentConfig::from_toml(&text).map_err(|e| usage(format!("config {}: {e}", path.display())))?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(e) = cfg.experiment {
        if e != cmd.experiment() {
            return Err(usage(format!("config is for '{}', not '{}'", e.name(), cmd.experiment().name())));
        }
    }
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(o) = &common.out {
        cfg.out_dir = o.clone();
    }
    cfg.format.svg |= common.svg;
    match cmd {
        Command::Fig3 { sigma: Some(s), .. } => {
            if let Some(bad) = s.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
                return Err(usage(format!("--sigma must be > 0 (the score estimate divides by σ²), got {bad}")));
            }
            cfg.fig3.sigmas = s.clone();
        }
        Command::Fig4 { train, .. } => apply(train, &mut cfg.fig4.train),
        Command::Fig5 { train, .. } => apply(train, &mut cfg.fig5.train),
        _ => {}
    }
    cfg.validate().map_err(usage)?;
    Ok(cfg)
}

fn apply(o: &TrainOverrides, t: &mut config::TrainSection) {
    if let Some(i) = o.iters {
        t.max_iters = i;
    }
    if let Some(h) = o.hidden {
        t.n_hidden = h;
    }
}

fn prepare_out(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| usage(format!("output directory {}: {e}", dir.display())))
}

fn execute(cmd: Command) -> Result<i32> {
    init_threads()?;
    if let Command::Validate { suite, .. } = &cmd {
        if !validate::SUITES.contains(&suite.as_str()) {
            return Err(usage(format!("unknown suite '{suite}' (expected one of {})", validate::SUITES.join(", "))));
        }
    }
    let cfg = load_config(&cmd)?;
    let out = cfg.out_dir.clone();
    prepare_out(&out)?;
    match &cmd {
        Command::Fig3 { .. } => {
            let s = commands::fig3(&cfg, &out)?;
            for r in &s.rows {
                println!("σ={}: bulk RMSE rcae {:.4e}, dae {:.4e}", r.sigma, r.rmse_rcae, r.rmse_dae);
            }
        }
        Command::Fig4 { load, .. } => {
            let s = commands::fig4(&cfg, &out, load.as_deref())?;
            if let Some(t) = &s.training {
                println!("training loss {:.6e}", t.loss);
            }
            for c in &s.checks {
                println!("{}", c.line());
            }
        }
        Command::Fig5 { .. } => {
            let d = commands::fig5(&cfg, &out)?;
            println!(
                "acceptance {:.3}, {} samples, {:.1}% within {} of the curve",
                d.acceptance_rate,
                d.retained,
                100.0 * d.proximity_fraction,
                d.proximity_tolerance
            );
        }
        Command::Fig6 { .. } => {
            let s = commands::fig6(&cfg, &out)?;
            for (name, a) in [("undertrained", &s.undertrained), ("well-trained", &s.well_trained)] {
                println!("{name}: spurious fraction {:.3}, {} clusters", a.spurious_fraction, a.spurious_clusters);
            }
        }
        Command::Validate { suite, .. } => {
            let rep = validate::run_suite(suite, &cfg)?;
            for c in &rep.checks {
                println!("{}", c.line());
            }
            let path = out.join(format!("validate_{suite}.json"));
            fs::write(&path, serde_json::to_string_pretty(&rep)? + "\n").with_context(|| format!("writing {}", path.display()))?;
            return Ok(if rep.passed { 0 } else { 1 });
        }
    }
    Ok(0)
}

/// Parses `args` (including the program name) and runs; returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                2
            } else {
                1
            }
        }
    }
}

#[cfg(test)]
mod tests;
