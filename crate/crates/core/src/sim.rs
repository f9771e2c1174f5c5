//! Seeded simulation loops for online and active multitask learning.

use rand::Rng;
use serde::Serialize;

use crate::envs::Environment;
use crate::error::{Error, Result};
use crate::policies::{scan_predictions, ActiveLearner, AdaState, Learner};
use crate::posterior::{Observation, Prediction};
use crate::rng::{stream, Stream};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunOptions {
    pub horizon: usize,
    /// Evaluate every task on its whole pool each round and record whether
    /// all true means lie inside the confidence intervals.
    pub track_coverage: bool,
}

impl RunOptions {
    pub fn new(horizon: usize) -> Self {
        Self { horizon, track_coverage: false }
    }

    pub fn with_coverage(mut self, on: bool) -> Self {
        self.track_coverage = on;
        self
    }
}

/// One round of a run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepRecord {
    /// 1-based round number.
    pub step: usize,
    /// Revealed task (online) or queried task (active).
    pub task: usize,
    /// Pool index played for `task`.
    pub action: usize,
    pub reward: f64,
    pub beta: f64,
    pub sigma: f64,
    /// Online regret of the action, or the task-averaged regret of all
    /// recommendations in active runs.
    pub regret: f64,
    /// `2βσ` at the played point.
    pub width_term: f64,
    pub epoch: usize,
    pub evicted: Option<f64>,
    /// Whether every true mean was inside its interval before this round.
    pub covered: Option<bool>,
    /// Largest posterior variance over the predictions made this round.
    pub max_variance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunTrace {
    pub records: Vec<StepRecord>,
    /// Ridge of the acting learner, for the variance cap.
    pub ridge: f64,
}

impl RunTrace {
    pub fn cumulative_regret(&self) -> Vec<f64> {
        let mut acc = 0.0;
        self.records
            .iter()
            .map(|r| {
                acc += r.regret;
                acc
            })
            .collect()
    }

    pub fn final_regret(&self) -> f64 {
        self.records.iter().map(|r| r.regret).sum()
    }

    pub fn width_sum(&self) -> f64 {
        self.records.iter().map(|r| r.width_term).sum()
    }

    /// `Some(true)` if containment held at every tracked round.
    pub fn coverage_held(&self) -> Option<bool> {
        let mut any = false;
        for r in &self.records {
            match r.covered {
                Some(false) => return Some(false),
                Some(true) => any = true,
                None => {}
            }
        }
        any.then_some(true)
    }

    pub fn max_variance(&self) -> f64 {
        self.records.iter().map(|r| r.max_variance).fold(0.0, f64::max)
    }

    pub fn evictions(&self) -> Vec<(usize, f64)> {
        self.records.iter().filter_map(|r| r.evicted.map(|e| (r.step, e))).collect()
    }
}

/// Online decision makers.
#[derive(Debug, Clone)]
pub enum OnlinePolicy {
    Ucb(Learner),
    Ada(AdaState),
}

impl OnlinePolicy {
    fn acting(&self) -> &Learner {
        match self {
            OnlinePolicy::Ucb(l) => l,
            OnlinePolicy::Ada(a) => a.acting(),
        }
    }
}

/// Checks containment over every task's pool and returns the predictions.
fn coverage_sweep(
    env: &Environment,
    learner: &Learner,
    beta: f64,
) -> Result<(Vec<Vec<Prediction>>, bool, f64)> {
    let mut all = Vec::with_capacity(env.n_tasks());
    let mut covered = true;
    let mut max_var = 0.0_f64;
    for i in 0..env.n_tasks() {
        let preds = learner.predictions(i, env.pool(i))?;
        for (p, &f) in preds.iter().zip(env.means(i)) {
            max_var = max_var.max(p.variance);
            if (p.mean - f).abs() > beta * p.std_dev() {
                covered = false;
            }
        }
        all.push(preds);
    }
    Ok((all, covered, max_var))
}

fn check_env(env: &Environment, learner: &Learner) -> Result<()> {
    let n = learner.posterior().n_tasks();
    if n != env.n_tasks() {
        return Err(Error::InconsistentParameters(format!(
            "learner has {n} tasks, environment has {}",
            env.n_tasks()
        )));
    }
    let d = learner.posterior().base().input_dim;
    if d != env.input_dim() {
        return Err(Error::DimensionMismatch { expected: env.input_dim(), got: d });
    }
    Ok(())
}

/// Runs an online episode: nature reveals a uniformly random task each round,
/// the policy plays a pool point and observes a noisy reward.
pub fn run_online(env: &Environment, mut policy: OnlinePolicy, seed: u64, opts: &RunOptions) -> Result<RunTrace> {
    check_env(env, policy.acting())?;
    if opts.horizon == 0 {
        return Err(Error::InvalidParameter("horizon must be at least 1".into()));
    }
    let mut tasks = stream(seed, Stream::Tasks);
    let mut noise = stream(seed, Stream::Noise);
    let mut records = Vec::with_capacity(opts.horizon);
    let ridge = policy.acting().params().ridge;
    for t in 1..=opts.horizon {
        let task = tasks.random_range(0..env.n_tasks());
        let pool = env.pool(task);
        let acting = policy.acting();
        let beta = acting.beta()?;
        let (covered, max_variance, scan) = if opts.track_coverage {
            let (preds, covered, mv) = coverage_sweep(env, acting, beta)?;
            let scan = scan_predictions(&preds[task], beta).ok_or(Error::EmptyPool(task))?;
            (Some(covered), mv, scan)
        } else {
            let scan = acting.scan(task, pool)?;
            (None, scan.max_variance, scan)
        };
        let action = scan.index;
        let reward = env.feedback_at(task, action, &mut noise)?;
        let regret = env.online_regret_increment(task, action)?;
        let obs = Observation::new(task, pool[action].clone(), reward, t as u64);
        let (epoch, evicted) = match &mut policy {
            OnlinePolicy::Ucb(l) => {
                l.observe(obs)?;
                (0, None)
            }
            OnlinePolicy::Ada(a) => {
                let choice = crate::policies::AdaChoice { scan, eps: a.surviving()[0] };
                let epoch = a.epoch();
                let ev = a.observe(&choice, obs)?;
                (epoch, ev)
            }
        };
        records.push(StepRecord {
            step: t,
            task,
            action,
            reward,
            beta: scan.beta,
            sigma: scan.sigma,
            regret,
            width_term: 2.0 * scan.beta * scan.sigma,
            epoch,
            evicted,
            covered,
            max_variance,
        });
    }
    Ok(RunTrace { records, ridge })
}

/// Runs an active-learning episode: every round the learner recommends one
/// point per task and queries a single task.
pub fn run_active(env: &Environment, mut learner: ActiveLearner, seed: u64, opts: &RunOptions) -> Result<RunTrace> {
    check_env(env, learner.learner())?;
    if opts.horizon == 0 {
        return Err(Error::InvalidParameter("horizon must be at least 1".into()));
    }
    let mut noise = stream(seed, Stream::Noise);
    let mut policy_rng = stream(seed, Stream::Policy);
    let mut records = Vec::with_capacity(opts.horizon);
    let ridge = learner.learner().params().ridge;
    for t in 1..=opts.horizon {
        let beta = learner.learner().beta()?;
        let (preds, covered) = if opts.track_coverage {
            let (p, c, _) = coverage_sweep(env, learner.learner(), beta)?;
            (p, Some(c))
        } else {
            let pools: Vec<&[Vec<f64>]> = (0..env.n_tasks()).map(|i| env.pool(i)).collect();
            (learner.all_predictions(&pools)?, None)
        };
        let choice = learner.choose_from(&preds, &mut policy_rng)?;
        let max_variance = choice.scans.iter().map(|s| s.max_variance).fold(0.0, f64::max);
        let regret = env.al_regret_increment(&choice.picks())?;
        let task = choice.query;
        let s = choice.scans[task];
        let reward = env.feedback_at(task, s.index, &mut noise)?;
        learner.observe(Observation::new(task, env.pool(task)[s.index].clone(), reward, t as u64))?;
        records.push(StepRecord {
            step: t,
            task,
            action: s.index,
            reward,
            beta: s.beta,
            sigma: s.sigma,
            regret,
            width_term: choice.width_term(),
            epoch: 0,
            evicted: None,
            covered,
            max_variance,
        });
    }
    Ok(RunTrace { records, ridge })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{generate_synthetic, SyntheticSpec};
    use crate::policies::{AdaBMode, Preset, QueryRule};

    fn env(seed: u64) -> Environment {
        let spec = SyntheticSpec { pool_size: 300, ..SyntheticSpec::new(3, 3, 0.4) };
        generate_synthetic(&spec, seed).unwrap()
    }

    fn learner(env: &Environment, preset: Preset) -> Learner {
        let base = env.normalized_linear_kernel().unwrap();
        let (bb, eps) = env.linear_constants(&base, 1.0).unwrap();
        Learner::preset(preset, base, env.n_tasks(), bb, eps, 0.1).unwrap()
    }

    #[test]
    fn online_runs_are_deterministic_and_regret_nonnegative() {
        let e = env(4);
        let opts = RunOptions::new(30).with_coverage(true);
        let a = run_online(&e, OnlinePolicy::Ucb(learner(&e, Preset::Improved { b: 1.0 })), 4, &opts).unwrap();
        let b = run_online(&e, OnlinePolicy::Ucb(learner(&e, Preset::Improved { b: 1.0 })), 4, &opts).unwrap();
        assert_eq!(a, b);
        assert!(a.records.iter().all(|r| r.regret >= 0.0));
        let c = a.cumulative_regret();
        assert!(c.windows(2).all(|w| w[1] >= w[0]));
        assert!(a.max_variance() <= a.ridge + 1e-10);
    }

    #[test]
    fn single_value_grid_matches_plain_learner() {
        let e = env(5);
        let base = e.normalized_linear_kernel().unwrap();
        let (bb, eps) = e.linear_constants(&base, 1.0).unwrap();
        let eps = (eps * 10.0).ceil() / 10.0;
        let ada = AdaState::new(base, 3, &[eps], bb, 0.1, AdaBMode::Shared { b: 1.0 }, 1.0).unwrap();
        let plain = Learner::preset(Preset::Improved { b: 1.0 }, base, 3, bb, eps, 0.1).unwrap();
        let opts = RunOptions::new(40);
        let a = run_online(&e, OnlinePolicy::Ada(ada), 5, &opts).unwrap();
        let p = run_online(&e, OnlinePolicy::Ucb(plain), 5, &opts).unwrap();
        assert!(a.evictions().is_empty());
        let acts = |t: &RunTrace| t.records.iter().map(|r| r.action).collect::<Vec<_>>();
        assert_eq!(acts(&a), acts(&p));
    }

    #[test]
    fn active_run_bounds_and_determinism() {
        let e = env(6);
        let opts = RunOptions::new(25).with_coverage(true);
        let mk = || ActiveLearner::new(learner(&e, Preset::Improved { b: 1.0 }), QueryRule::Uncertainty);
        let a = run_active(&e, mk(), 6, &opts).unwrap();
        assert_eq!(a, run_active(&e, mk(), 6, &opts).unwrap());
        if a.coverage_held() == Some(true) {
            for r in &a.records {
                assert!(r.regret <= r.width_term + 1e-9);
            }
        }
    }

    #[test]
    fn mismatched_learner_is_rejected() {
        let e = env(1);
        let base = e.normalized_linear_kernel().unwrap();
        let l = Learner::preset(Preset::Independent, base, 2, 1.0, 0.1, 0.1).unwrap();
        assert!(run_online(&e, OnlinePolicy::Ucb(l), 1, &RunOptions::new(3)).is_err());
    }
}
