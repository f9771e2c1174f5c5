//! Experiment runner for multitask online and active learning simulations.

pub mod config;
mod error;
pub mod experiment;
pub mod output;
pub mod plot;
pub mod selfcheck;

use std::path::{Path, PathBuf};

pub use error::CliError;

use config::{ExperimentConfig, Mode};
use experiment::{run_experiment, widths_bench};
use output::{results_csv, summarize, summary_json, widths_csv, write_all, Summary};

/// Command-line values that take precedence over the config file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seeds: Option<Vec<u64>>,
    pub plot: bool,
    pub jobs: Option<usize>,
    pub sweep_b: Option<Vec<f64>>,
}

/// Loads (or defaults) the config and applies overrides. Output directory
/// precedence: `--out`, then the environment variable, then the file.
pub fn prepare(path: Option<&Path>, mode: Mode, ov: &Overrides) -> Result<ExperimentConfig, CliError> {
    let mut cfg = match path {
        Some(p) => ExperimentConfig::load(p)?,
        None if mode == Mode::WidthsBench => ExperimentConfig::empty(mode),
        None => return Err(CliError::Config("--config is required for this subcommand".into())),
    };
    cfg.resolve_mode(mode)?;
    cfg.apply_env_override();
    if let Some(out) = &ov.out {
        cfg.output_dir = out.clone();
    }
    if let Some(seeds) = &ov.seeds {
        cfg.seeds = seeds.clone();
    }
    if ov.plot {
        cfg.plot = true;
    }
    if ov.jobs.is_some() {
        cfg.jobs = ov.jobs;
    }
    if let Some(b) = &ov.sweep_b {
        cfg.sweep_b = b.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn default_jobs() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

/// Runs an online or active experiment and writes `results.csv`,
/// `summary.json` and, if requested, `regret.svg`. Nothing is written when
/// any run fails.
pub fn simulate(cfg: &ExperimentConfig) -> Result<Summary, CliError> {
    let out = run_experiment(cfg, cfg.jobs.unwrap_or_else(default_jobs))?;
    let mode = cfg.mode().name();
    let summary = summarize(&out, mode, cfg.horizon, &cfg.seeds);
    let mut files = vec![("results.csv", results_csv(&out.results)?), ("summary.json", summary_json(&summary)?)];
    if cfg.plot {
        let title = format!("{mode} regret (mean ± standard error)");
        files.push(("regret.svg", plot::regret_chart(&title, &out.results).into_bytes()));
    }
    write_all(&cfg.output_dir, &files)?;
    Ok(summary)
}

/// Writes `widths.csv` and, if requested, `widths.svg`.
pub fn bench_widths(cfg: &ExperimentConfig) -> Result<Vec<experiment::WidthRow>, CliError> {
    let rows = widths_bench(cfg)?;
    let mut files = vec![("widths.csv", widths_csv(&rows)?)];
    if cfg.plot {
        files.push(("widths.svg", plot::widths_chart(&rows).into_bytes()));
    }
    write_all(&cfg.output_dir, &files)?;
    Ok(rows)
}
