//! Decision rules built on the multitask posterior.

mod active;
mod ada;

use serde::{Deserialize, Serialize};

pub use active::{aelsvi_query, ActiveChoice, ActiveLearner, QueryRule};
pub use ada::{misspec_test, AdaBMode, AdaChoice, AdaState};

use crate::confidence::{matched_ridge, widths_for_state, WidthBranch, WidthParams, WidthReport};
use crate::error::{Error, Result};
use crate::posterior::{Observation, PosteriorState, Prediction};
use crate::taskalgebra::{BaseKernel, TaskCoupling};

/// Which width multiplies the posterior standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WidthRule {
    /// Minimum of the three widths.
    New,
    Naive,
    SmallB,
    LargeB,
    /// A constant width, mainly for tests and greedy play (`0`).
    Fixed(f64),
}

impl WidthRule {
    fn pick(&self, report: &WidthReport) -> f64 {
        match self {
            WidthRule::New => report.new,
            WidthRule::Naive => report.naive,
            WidthRule::SmallB => report.small_b,
            WidthRule::LargeB => report.large_b,
            WidthRule::Fixed(v) => *v,
        }
    }
}

impl From<WidthBranch> for WidthRule {
    fn from(b: WidthBranch) -> Self {
        match b {
            WidthBranch::Naive => WidthRule::Naive,
            WidthBranch::SmallB => WidthRule::SmallB,
            WidthBranch::LargeB => WidthRule::LargeB,
        }
    }
}

/// The four classical configurations of the multitask learner.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "preset")]
pub enum Preset {
    /// `b = 0`, `λ = 1`, small-b width: one single-task learner per task.
    Independent,
    /// Shared `b`, `λ = 1`, naive width.
    Naive { b: f64 },
    /// Shared `b`, `λ = (N+b)/(N+bN)`, minimum of the three widths.
    Improved { b: f64 },
    /// All tasks treated as one, `λ = 1/N`, naive width with `ε = 0`.
    Pooled,
}

/// Outcome of scanning a candidate pool.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scan {
    /// Pool index of the ucb maximizer (lowest index on ties).
    pub index: usize,
    pub ucb: f64,
    pub mean: f64,
    pub sigma: f64,
    pub beta: f64,
    /// `max_x μ(x) − β σ(x)` over the pool.
    pub max_lcb: f64,
    /// Largest posterior variance over the pool.
    pub max_variance: f64,
}

/// Ucb argmax and lcb max over precomputed predictions.
pub fn scan_predictions(preds: &[Prediction], beta: f64) -> Option<Scan> {
    let mut best: Option<Scan> = None;
    let mut max_lcb = f64::NEG_INFINITY;
    let mut max_variance = 0.0_f64;
    for (k, p) in preds.iter().enumerate() {
        max_variance = max_variance.max(p.variance);
        let sigma = p.std_dev();
        let ucb = p.mean + beta * sigma;
        max_lcb = max_lcb.max(p.mean - beta * sigma);
        if best.is_none_or(|b| ucb > b.ucb) {
            best = Some(Scan { index: k, ucb, mean: p.mean, sigma, beta, max_lcb: 0.0, max_variance: 0.0 });
        }
    }
    best.map(|mut s| {
        s.max_lcb = max_lcb;
        s.max_variance = max_variance;
        s
    })
}

/// A single multitask UCB learner: one posterior and a width rule.
#[derive(Debug, Clone)]
pub struct Learner {
    posterior: PosteriorState,
    params: WidthParams,
    rule: WidthRule,
}

impl Learner {
    pub fn new(base: BaseKernel, params: WidthParams, rule: WidthRule) -> Result<Self> {
        params.validate()?;
        let posterior = PosteriorState::new(params.coupling, base, params.ridge)?;
        Ok(Self { posterior, params, rule })
    }

    /// Builds one of the standard configurations.
    pub fn preset(
        preset: Preset,
        base: BaseKernel,
        n_tasks: usize,
        bound_b: f64,
        eps: f64,
        delta: f64,
    ) -> Result<Self> {
        let (coupling, ridge, rule, eps) = match preset {
            Preset::Independent => (TaskCoupling::independent(n_tasks)?, 1.0, WidthRule::SmallB, eps),
            Preset::Naive { b } => (TaskCoupling::new(b, n_tasks)?, 1.0, WidthRule::Naive, eps),
            Preset::Improved { b } => (TaskCoupling::new(b, n_tasks)?, matched_ridge(b, n_tasks), WidthRule::New, eps),
            Preset::Pooled => (TaskCoupling::pooled(n_tasks)?, 1.0 / n_tasks as f64, WidthRule::Naive, 0.0),
        };
        let params = WidthParams::new(bound_b, eps, delta, coupling, ridge)?;
        Self::new(base, params, rule)
    }

    pub fn posterior(&self) -> &PosteriorState {
        &self.posterior
    }

    pub fn params(&self) -> &WidthParams {
        &self.params
    }

    pub fn rule(&self) -> WidthRule {
        self.rule
    }

    pub fn report(&self) -> Result<WidthReport> {
        widths_for_state(&self.params, &self.posterior)
    }

    /// Current width `β_t` under the configured rule.
    pub fn beta(&self) -> Result<f64> {
        Ok(self.rule.pick(&self.report()?))
    }

    pub fn predictions(&self, task: usize, pool: &[Vec<f64>]) -> Result<Vec<Prediction>> {
        self.posterior.predict_many(task, pool)
    }

    /// Ucb argmax for `task` over `pool`.
    pub fn scan(&self, task: usize, pool: &[Vec<f64>]) -> Result<Scan> {
        let preds = self.predictions(task, pool)?;
        let beta = self.beta()?;
        scan_predictions(&preds, beta).ok_or(Error::EmptyPool(task))
    }

    /// Pool index maximizing `μ + βσ` for the revealed task.
    pub fn select(&self, task: usize, pool: &[Vec<f64>]) -> Result<usize> {
        Ok(self.scan(task, pool)?.index)
    }

    /// `(μ − βσ, μ + βσ)` at a single query.
    pub fn bounds(&self, task: usize, x: &[f64]) -> Result<(f64, f64)> {
        let p = self.posterior.predict(task, x)?;
        let half = self.beta()? * p.std_dev();
        Ok((p.mean - half, p.mean + half))
    }

    pub fn observe(&mut self, obs: Observation) -> Result<()> {
        self.posterior.update(obs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn circle_pool(n: usize) -> Vec<Vec<f64>> {
        // exact unit norms
        let mut pool = vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![-1.0, 0.0], vec![0.0, -1.0]];
        pool.truncate(n);
        pool
    }

    fn improved(b: f64, n: usize) -> Learner {
        Learner::preset(Preset::Improved { b }, BaseKernel::linear(2), n, 1.0, 0.3, 0.1).unwrap()
    }

    #[test]
    fn empty_history_picks_first_of_equal_norms() {
        let l = improved(1.0, 3);
        assert_eq!(l.select(1, &circle_pool(4)).unwrap(), 0);
    }

    #[test]
    fn ucb_argmax_matches_brute_force() {
        let mut l = improved(0.5, 2);
        l.observe(Observation::new(0, vec![0.0, 1.0], 5.0, 1)).unwrap();
        let pool: Vec<Vec<f64>> = (0..50)
            .map(|k| {
                let a = k as f64 * 0.37;
                vec![a.cos() * 0.9, a.sin() * 0.9]
            })
            .collect();
        let beta = l.beta().unwrap();
        let mut best = (0, f64::NEG_INFINITY);
        for (k, x) in pool.iter().enumerate() {
            let p = l.posterior().predict(0, x).unwrap();
            let u = p.mean + beta * p.std_dev();
            if u > best.1 {
                best = (k, u);
            }
        }
        let s = l.scan(0, &pool).unwrap();
        assert_eq!(s.index, best.0);
        assert!((s.ucb - best.1).abs() < 1e-10);
    }

    #[test]
    fn zero_width_is_greedy() {
        let params = WidthParams::new(1.0, 0.3, 0.1, TaskCoupling::new(1.0, 2).unwrap(), 0.75).unwrap();
        let mut l = Learner::new(BaseKernel::linear(2), params, WidthRule::Fixed(0.0)).unwrap();
        l.observe(Observation::new(1, vec![1.0, 0.2], -2.0, 1)).unwrap();
        let pool = circle_pool(4);
        let means: Vec<f64> = pool.iter().map(|x| l.posterior().mean(1, x).unwrap()).collect();
        let greedy = (0..4).fold(0, |b, k| if means[k] > means[b] { k } else { b });
        assert_eq!(l.select(1, &pool).unwrap(), greedy);
    }

    #[test]
    fn empty_pool_errors() {
        let l = improved(1.0, 2);
        assert!(matches!(l.select(0, &[]), Err(Error::EmptyPool(0))));
    }

    #[test]
    fn independent_preset_equals_zero_b_learner() {
        let a = Learner::preset(Preset::Independent, BaseKernel::linear(2), 3, 1.0, 0.4, 0.1).unwrap();
        let params = WidthParams::new(1.0, 0.4, 0.1, TaskCoupling::new(0.0, 3).unwrap(), 1.0).unwrap();
        let b = Learner::new(BaseKernel::linear(2), params, WidthRule::SmallB).unwrap();
        assert_eq!(a.params(), b.params());
        assert_eq!(a.rule(), b.rule());
    }
}
