//! Seeded multi-run execution.

use std::sync::Arc;
use std::time::{Duration, Instant};

use rayon::prelude::*;

use multitask_ucb::confidence::{beta_new, matched_ridge, WidthParams};
use multitask_ucb::envs::{generate_synthetic, load_dataset, DatasetOptions, Environment};
use multitask_ucb::policies::{ActiveLearner, AdaBMode, AdaState, Learner, Preset, QueryRule};
use multitask_ucb::sim::{run_active, run_online, OnlinePolicy, RunOptions, RunTrace};
use multitask_ucb::taskalgebra::{BaseKernel, TaskCoupling};

use crate::config::{BMode, EnvConfig, ExperimentConfig, KernelChoice, Mode, PolicyConfig, PolicyKind, WidthChoice};
use crate::error::CliError;

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub policy: String,
    pub seed: u64,
    /// Cumulative regret after each step.
    pub cum_regret: Vec<f64>,
    /// `(step, description)` of notable events such as evictions.
    pub events: Vec<(usize, String)>,
    pub wall_time: Duration,
}

impl RunResult {
    pub fn final_regret(&self) -> f64 {
        self.cum_regret.last().copied().unwrap_or(0.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutput {
    /// Ordered by policy (config order), then seed (config order).
    pub results: Vec<RunResult>,
    pub chosen_b: f64,
    /// `(b, mean final regret)` of the selection policy for every swept `b`.
    pub sweep: Vec<(f64, f64)>,
    pub sweep_policy: Option<String>,
}

/// One per-seed environment with the learner constants derived from it.
struct Instance {
    env: Arc<Environment>,
    base: BaseKernel,
    bound_b: f64,
    eps: f64,
}

fn instances(cfg: &ExperimentConfig) -> Result<Vec<Instance>, CliError> {
    let env_cfg = cfg.env.as_ref().ok_or_else(|| CliError::Config("an [env] section is required".into()))?;
    let shared = match env_cfg {
        EnvConfig::Dataset(d) => {
            let opts = DatasetOptions { standardize: d.standardize, noise_sigma: d.noise_sigma };
            Some(Arc::new(load_dataset(&d.path, opts)?))
        }
        EnvConfig::Synthetic(_) => None,
    };
    cfg.seeds
        .par_iter()
        .map(|&seed| {
            let env = match (&shared, env_cfg) {
                (Some(e), _) => e.clone(),
                (None, EnvConfig::Synthetic(spec)) => Arc::new(generate_synthetic(spec, seed)?),
                (None, EnvConfig::Dataset(_)) => unreachable!(),
            };
            instance(cfg, env)
        })
        .collect()
}

fn instance(cfg: &ExperimentConfig, env: Arc<Environment>) -> Result<Instance, CliError> {
    let l = &cfg.learner;
    let base = match l.kernel {
        KernelChoice::Linear => env.normalized_linear_kernel()?,
        KernelChoice::SquaredExponential => BaseKernel::squared_exponential(env.input_dim(), l.lengthscale)?,
    };
    let (bound_b, eps) = if env.is_linear() && base.is_linear() {
        let (b, e) = env.linear_constants(&base, l.bound_b)?;
        (b, l.eps.unwrap_or(e))
    } else {
        let eps = l.eps.ok_or_else(|| CliError::Config("[learner] eps is required".into()))?;
        (l.bound_b, eps)
    };
    Ok(Instance { env, base, bound_b, eps })
}

fn width_preset(width: WidthChoice, b: f64) -> Preset {
    match width {
        WidthChoice::Improved => Preset::Improved { b },
        WidthChoice::Naive => Preset::Naive { b },
    }
}

fn run_one(
    cfg: &ExperimentConfig,
    policy: &PolicyConfig,
    inst: &Instance,
    seed: u64,
    b: f64,
) -> Result<RunTrace, CliError> {
    let n = inst.env.n_tasks();
    let delta = cfg.learner.delta;
    let learner = |preset| Learner::preset(preset, inst.base, n, inst.bound_b, inst.eps, delta);
    let opts = RunOptions::new(cfg.horizon);
    let env = inst.env.as_ref();
    let trace = match policy.kind {
        PolicyKind::Independent => run_online(env, OnlinePolicy::Ucb(learner(Preset::Independent)?), seed, &opts)?,
        PolicyKind::Pooled => run_online(env, OnlinePolicy::Ucb(learner(Preset::Pooled)?), seed, &opts)?,
        PolicyKind::MtUcb => {
            run_online(env, OnlinePolicy::Ucb(learner(width_preset(policy.width(), b))?), seed, &opts)?
        }
        PolicyKind::AdamtUcb => {
            let mode = match policy.b_mode() {
                BMode::Shared => AdaBMode::Shared { b },
                BMode::PerDeviation => AdaBMode::PerDeviation { horizon: cfg.horizon },
            };
            let state = AdaState::new(inst.base, n, &policy.grid(), inst.bound_b, delta, mode, policy.c())?;
            run_online(env, OnlinePolicy::Ada(state), seed, &opts)?
        }
        PolicyKind::MtAl | PolicyKind::Uniform | PolicyKind::AeLsvi => {
            let rule = match policy.kind {
                PolicyKind::MtAl => QueryRule::Uncertainty,
                PolicyKind::Uniform => QueryRule::Uniform,
                _ => QueryRule::Aelsvi,
            };
            let al = ActiveLearner::new(learner(width_preset(policy.width(), b))?, rule);
            run_active(env, al, seed, &opts)?
        }
    };
    Ok(trace)
}

fn to_result(label: &str, seed: u64, trace: &RunTrace, wall_time: Duration) -> RunResult {
    let events = trace
        .records
        .iter()
        .filter_map(|r| r.evicted.map(|e| (r.step, format!("evict:{e}"))))
        .collect();
    RunResult { policy: label.to_string(), seed, cum_regret: trace.cumulative_regret(), events, wall_time }
}

fn run_grid(
    cfg: &ExperimentConfig,
    insts: &[Instance],
    policies: &[&PolicyConfig],
    b: f64,
) -> Result<Vec<RunResult>, CliError> {
    let jobs: Vec<(&PolicyConfig, usize)> =
        policies.iter().flat_map(|p| (0..insts.len()).map(move |k| (*p, k))).collect();
    jobs.par_iter()
        .map(|&(p, k)| {
            let start = Instant::now();
            let seed = cfg.seeds[k];
            let trace = run_one(cfg, p, &insts[k], seed, b)?;
            Ok(to_result(&p.label(), seed, &trace, start.elapsed()))
        })
        .collect()
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    s / n as f64
}

/// Runs every `(policy, seed)` pair on a pool of at most `jobs` threads.
/// Results do not depend on `jobs`.
pub fn run_experiment(cfg: &ExperimentConfig, jobs: usize) -> Result<ExperimentOutput, CliError> {
    cfg.validate()?;
    if cfg.mode() == Mode::WidthsBench {
        return Err(CliError::Config("widths-bench does not run policies".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| CliError::Config(format!("cannot start worker pool: {e}")))?;
    pool.install(|| {
        let insts = instances(cfg)?;
        let mut chosen_b = cfg.learner.b;
        let mut sweep = Vec::new();
        let mut sweep_policy = None;
        if !cfg.sweep_b.is_empty() {
            let reference = cfg
                .policies
                .iter()
                .find(|p| p.uses_b() && p.width() == WidthChoice::Improved)
                .or_else(|| cfg.policies.iter().find(|p| p.uses_b()))
                .ok_or_else(|| CliError::Config("sweep_b given but no policy depends on b".into()))?;
            let mut best = (f64::NAN, f64::INFINITY);
            for &b in &cfg.sweep_b {
                let runs = run_grid(cfg, &insts, &[reference], b)?;
                let m = mean(runs.iter().map(RunResult::final_regret));
                sweep.push((b, m));
                if m < best.1 {
                    best = (b, m);
                }
            }
            chosen_b = best.0;
            sweep_policy = Some(reference.label());
        }
        let policies: Vec<&PolicyConfig> = cfg.policies.iter().collect();
        let results = run_grid(cfg, &insts, &policies, chosen_b)?;
        Ok(ExperimentOutput { results, chosen_b, sweep, sweep_policy })
    })
}

/// One row of the width sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WidthRow {
    pub b: f64,
    pub naive: f64,
    pub small_b: f64,
    pub large_b: f64,
    pub new: f64,
}

/// Evaluates the four widths over the configured log grid of `b`, each with
/// the matched ridge.
pub fn widths_bench(cfg: &ExperimentConfig) -> Result<Vec<WidthRow>, CliError> {
    cfg.validate()?;
    let w = &cfg.widths;
    w.grid()
        .into_iter()
        .map(|b| {
            let coupling = TaskCoupling::new(b, w.n_tasks)?;
            let p = WidthParams::new(w.bound_b, w.eps, w.delta, coupling, matched_ridge(b, w.n_tasks))?;
            let r = beta_new(&p, w.gamma_mt, w.gamma_st, w.t);
            Ok(WidthRow { b, naive: r.naive, small_b: r.small_b, large_b: r.large_b, new: r.new })
        })
        .collect()
}
