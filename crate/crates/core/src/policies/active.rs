//! Multitask active learning: recommend one point per task, query one task.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{scan_predictions, Learner, Scan};
use crate::error::{Error, Result};
use crate::posterior::{Observation, Prediction};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryRule {
    /// Task with the largest `β σ` at its recommended point.
    Uncertainty,
    /// Task drawn uniformly at random.
    Uniform,
    /// Task with the largest `ucb(i, x^i) − max_x lcb(i, x)`.
    Aelsvi,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActiveChoice {
    /// Per-task ucb maximizers.
    pub scans: Vec<Scan>,
    pub query: usize,
}

impl ActiveChoice {
    pub fn picks(&self) -> Vec<usize> {
        self.scans.iter().map(|s| s.index).collect()
    }

    /// `2 β σ` at the queried task's recommended point.
    pub fn width_term(&self) -> f64 {
        let s = &self.scans[self.query];
        2.0 * s.beta * s.sigma
    }
}

fn first_argmax(values: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (k, v) in values.enumerate() {
        if v > best.1 {
            best = (k, v);
        }
    }
    best.0
}

/// `argmax_i [ucb(i, x^i) − max_x lcb(i, x)]`, lowest index on ties.
pub fn aelsvi_query(scans: &[Scan]) -> Result<usize> {
    if scans.is_empty() {
        return Err(Error::EmptyPool(0));
    }
    Ok(first_argmax(scans.iter().map(|s| s.ucb - s.max_lcb)))
}

#[derive(Debug, Clone)]
pub struct ActiveLearner {
    learner: Learner,
    rule: QueryRule,
}

impl ActiveLearner {
    pub fn new(learner: Learner, rule: QueryRule) -> Self {
        Self { learner, rule }
    }

    pub fn learner(&self) -> &Learner {
        &self.learner
    }

    pub fn rule(&self) -> QueryRule {
        self.rule
    }

    /// Predictions of every task over its pool.
    pub fn all_predictions(&self, pools: &[&[Vec<f64>]]) -> Result<Vec<Vec<Prediction>>> {
        pools.iter().enumerate().map(|(i, p)| self.learner.predictions(i, p)).collect()
    }

    /// Chooses per-task points and the task to query from precomputed
    /// predictions.
    pub fn choose_from<R: Rng>(&self, preds: &[Vec<Prediction>], rng: &mut R) -> Result<ActiveChoice> {
        let n = self.learner.posterior().n_tasks();
        if preds.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: preds.len() });
        }
        let beta = self.learner.beta()?;
        let scans = preds
            .iter()
            .enumerate()
            .map(|(i, p)| scan_predictions(p, beta).ok_or(Error::EmptyPool(i)))
            .collect::<Result<Vec<_>>>()?;
        let query = match self.rule {
            QueryRule::Uncertainty => first_argmax(scans.iter().map(|s| s.beta * s.sigma)),
            QueryRule::Uniform => rng.random_range(0..n),
            QueryRule::Aelsvi => aelsvi_query(&scans)?,
        };
        Ok(ActiveChoice { scans, query })
    }

    pub fn choose<R: Rng>(&self, pools: &[&[Vec<f64>]], rng: &mut R) -> Result<ActiveChoice> {
        let preds = self.all_predictions(pools)?;
        self.choose_from(&preds, rng)
    }

    pub fn observe(&mut self, obs: Observation) -> Result<()> {
        self.learner.observe(obs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policies::Preset;
    use crate::rng::{stream, Stream};
    use crate::taskalgebra::BaseKernel;

    fn pool() -> Vec<Vec<f64>> {
        vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![-1.0, 0.0]]
    }

    fn learner(n: usize) -> Learner {
        Learner::preset(Preset::Improved { b: 0.5 }, BaseKernel::linear(2), n, 1.0, 0.3, 0.1).unwrap()
    }

    #[test]
    fn identical_tasks_query_first() {
        let p = pool();
        let pools: Vec<&[Vec<f64>]> = vec![&p, &p, &p];
        let mut rng = stream(0, Stream::Policy);
        for rule in [QueryRule::Uncertainty, QueryRule::Aelsvi] {
            let a = ActiveLearner::new(learner(3), rule);
            assert_eq!(a.choose(&pools, &mut rng).unwrap().query, 0);
        }
    }

    #[test]
    fn unobserved_task_is_queried() {
        let p = pool();
        let pools: Vec<&[Vec<f64>]> = vec![&p, &p, &p];
        let mut a = ActiveLearner::new(
            Learner::preset(Preset::Independent, BaseKernel::linear(2), 3, 1.0, 0.3, 0.1).unwrap(),
            QueryRule::Uncertainty,
        );
        let mut step = 0;
        for task in [0, 2] {
            for x in &p {
                for _ in 0..5 {
                    step += 1;
                    a.observe(Observation::new(task, x.clone(), 0.0, step)).unwrap();
                }
            }
        }
        let mut rng = stream(0, Stream::Policy);
        let c = a.choose(&pools, &mut rng).unwrap();
        let sig: Vec<f64> = c.scans.iter().map(|s| s.sigma).collect();
        assert!(sig[1] > sig[0] && sig[1] > sig[2]);
        assert_eq!(c.query, 1);
    }

    #[test]
    fn aelsvi_score_bounded_by_interval_length_and_matches_scan() {
        let p = pool();
        let pools: Vec<&[Vec<f64>]> = vec![&p, &p];
        let mut a = ActiveLearner::new(learner(2), QueryRule::Aelsvi);
        a.observe(Observation::new(0, vec![1.0, 0.0], 0.8, 1)).unwrap();
        a.observe(Observation::new(1, vec![0.0, 1.0], -0.4, 2)).unwrap();
        let mut rng = stream(0, Stream::Policy);
        let c = a.choose(&pools, &mut rng).unwrap();
        let beta = a.learner().beta().unwrap();
        let mut scores = Vec::new();
        for (i, s) in c.scans.iter().enumerate() {
            let mut max_lcb = f64::NEG_INFINITY;
            for x in &p {
                let (lo, _) = a.learner().bounds(i, x).unwrap();
                max_lcb = max_lcb.max(lo);
            }
            assert!((s.max_lcb - max_lcb).abs() < 1e-12);
            let score = s.ucb - max_lcb;
            // ucb − lcb at the same point is 2βσ
            assert!(score <= 2.0 * beta * s.sigma + 1e-12);
            scores.push(score);
        }
        let expect = if scores[1] > scores[0] { 1 } else { 0 };
        assert_eq!(c.query, expect);
    }

    #[test]
    fn uniform_query_frequencies() {
        let p = pool();
        let pools: Vec<&[Vec<f64>]> = vec![&p, &p, &p, &p];
        let a = ActiveLearner::new(learner(4), QueryRule::Uniform);
        let preds = a.all_predictions(&pools).unwrap();
        let mut rng = stream(11, Stream::Policy);
        let draws = 10_000;
        let mut counts = [0usize; 4];
        for _ in 0..draws {
            counts[a.choose_from(&preds, &mut rng).unwrap().query] += 1;
        }
        let sd = (draws as f64 * 0.25 * 0.75).sqrt();
        for c in counts {
            assert!((c as f64 - draws as f64 / 4.0).abs() < 4.0 * sd);
        }
    }
}
