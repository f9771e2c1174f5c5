//! CSV and JSON emission.

use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::error::CliError;
use crate::experiment::{ExperimentOutput, RunResult, WidthRow};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PolicySummary {
    pub policy: String,
    pub runs: usize,
    pub mean_final_regret: f64,
    pub stderr_final_regret: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepEntry {
    pub b: f64,
    pub mean_final_regret: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub mode: String,
    pub horizon: usize,
    pub seeds: Vec<u64>,
    pub chosen_b: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sweep_policy: Option<String>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub b_sweep: Vec<SweepEntry>,
    pub policies: Vec<PolicySummary>,
}

/// Mean and standard error (sample standard deviation over `√n`).
pub fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

/// Groups results by policy label in first-appearance order.
pub fn by_policy(results: &[RunResult]) -> Vec<(String, Vec<&RunResult>)> {
    let mut groups: Vec<(String, Vec<&RunResult>)> = Vec::new();
    for r in results {
        match groups.iter_mut().find(|(p, _)| *p == r.policy) {
            Some((_, g)) => g.push(r),
            None => groups.push((r.policy.clone(), vec![r])),
        }
    }
    groups
}

pub fn summarize(out: &ExperimentOutput, mode: &str, horizon: usize, seeds: &[u64]) -> Summary {
    let policies = by_policy(&out.results)
        .into_iter()
        .map(|(policy, runs)| {
            let finals: Vec<f64> = runs.iter().map(|r| r.final_regret()).collect();
            let (mean, se) = mean_stderr(&finals);
            PolicySummary { policy, runs: runs.len(), mean_final_regret: mean, stderr_final_regret: se }
        })
        .collect();
    Summary {
        mode: mode.to_string(),
        horizon,
        seeds: seeds.to_vec(),
        chosen_b: out.chosen_b,
        sweep_policy: out.sweep_policy.clone(),
        b_sweep: out.sweep.iter().map(|&(b, m)| SweepEntry { b, mean_final_regret: m }).collect(),
        policies,
    }
}

/// `policy,seed,step,cum_regret,event` with one row per step of every run.
pub fn results_csv(results: &[RunResult]) -> Result<Vec<u8>, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["policy", "seed", "step", "cum_regret", "event"]).map_err(csv_err)?;
    for r in results {
        let seed = r.seed.to_string();
        for (k, c) in r.cum_regret.iter().enumerate() {
            let step = k + 1;
            let event: Vec<&str> = r.events.iter().filter(|(s, _)| *s == step).map(|(_, e)| e.as_str()).collect();
            w.write_record([r.policy.as_str(), &seed, &step.to_string(), &format!("{c:?}"), &event.join(";")])
                .map_err(csv_err)?;
        }
    }
    w.into_inner().map_err(|e| CliError::Io(e.to_string()))
}

pub fn widths_csv(rows: &[WidthRow]) -> Result<Vec<u8>, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["b", "beta_naive", "beta_small_b", "beta_large_b", "beta_new"]).map_err(csv_err)?;
    for r in rows {
        w.write_record([r.b, r.naive, r.small_b, r.large_b, r.new].map(|v| format!("{v:?}"))).map_err(csv_err)?;
    }
    w.into_inner().map_err(|e| CliError::Io(e.to_string()))
}

pub fn summary_json(summary: &Summary) -> Result<Vec<u8>, CliError> {
    let mut bytes = serde_json::to_vec_pretty(summary).map_err(|e| CliError::Io(e.to_string()))?;
    bytes.push(b'\n');
    Ok(bytes)
}

fn csv_err(e: csv::Error) -> CliError {
    CliError::Io(e.to_string())
}

/// Writes every file into `dir`. Each file goes to a temporary sibling first
/// and is renamed into place only after all of them were written.
pub fn write_all(dir: &Path, files: &[(&str, Vec<u8>)]) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
    let mut staged = Vec::with_capacity(files.len());
    for (name, bytes) in files {
        let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
        tmp.write_all(bytes)?;
        tmp.flush()?;
        staged.push((tmp, dir.join(name)));
    }
    for (tmp, path) in staged {
        tmp.persist(&path).map_err(|e| CliError::Io(format!("{}: {}", path.display(), e.error)))?;
    }
    Ok(())
}
