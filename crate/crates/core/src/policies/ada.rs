//! Adaptive multitask UCB over a grid of candidate task deviations.

use serde::{Deserialize, Serialize};

use super::{Learner, Scan, WidthRule};
use crate::confidence::{matched_ridge, select_b_lambda, WidthParams};
use crate::error::{Error, Result};
use crate::posterior::Observation;
use crate::taskalgebra::{BaseKernel, TaskCoupling};

/// How each grid learner chooses its task similarity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum AdaBMode {
    /// `(b, λ)` from [`select_b_lambda`] with the learner's deviation value.
    PerDeviation { horizon: usize },
    /// One `b` for every learner with the matched ridge; learners differ only
    /// in their deviation value and hence their widths.
    Shared { b: f64 },
}

/// `U + R + c√(τ ln(ln(max(τ,3))/δ)) < max_L`.
pub fn misspec_test(tau: usize, u: f64, r: f64, max_l: f64, delta: f64, c: f64) -> bool {
    let tf = tau.max(3) as f64;
    let slack = c * (tau as f64 * (tf.ln() / delta).ln()).max(0.0).sqrt();
    u + r + slack < max_l
}

#[derive(Debug, Clone)]
struct GridLearner {
    eps: f64,
    learner: Learner,
}

/// Decision of the acting learner at one round.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdaChoice {
    pub scan: Scan,
    /// Deviation value of the acting learner.
    pub eps: f64,
}

#[derive(Debug, Clone)]
pub struct AdaState {
    learners: Vec<GridLearner>,
    tau: usize,
    u: f64,
    r: f64,
    l: Vec<f64>,
    epoch: usize,
    delta: f64,
    c: f64,
}

impl AdaState {
    /// One learner per grid value, each using the minimum of the three widths.
    pub fn new(
        base: BaseKernel,
        n_tasks: usize,
        eps_grid: &[f64],
        bound_b: f64,
        delta: f64,
        mode: AdaBMode,
        c: f64,
    ) -> Result<Self> {
        if eps_grid.is_empty() {
            return Err(Error::InvalidParameter("deviation grid is empty".into()));
        }
        if eps_grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidParameter("deviation grid must be strictly increasing".into()));
        }
        if eps_grid.iter().any(|&e| !(e > 0.0 && e <= 2.0)) {
            return Err(Error::InvalidParameter("deviation grid values must lie in (0, 2]".into()));
        }
        if !(c > 0.0 && c.is_finite()) {
            return Err(Error::InvalidParameter("concentration constant must be positive".into()));
        }
        let learners = eps_grid
            .iter()
            .map(|&eps| {
                let (coupling, ridge) = match mode {
                    AdaBMode::PerDeviation { horizon } => {
                        let s = select_b_lambda(n_tasks, horizon, eps)?;
                        (s.coupling, s.ridge)
                    }
                    AdaBMode::Shared { b } => (TaskCoupling::new(b, n_tasks)?, matched_ridge(b, n_tasks)),
                };
                let params = WidthParams::new(bound_b, eps, delta, coupling, ridge)?;
                Ok(GridLearner { eps, learner: Learner::new(base, params, WidthRule::New)? })
            })
            .collect::<Result<Vec<_>>>()?;
        let l = vec![0.0; learners.len()];
        Ok(Self { learners, tau: 0, u: 0.0, r: 0.0, l, epoch: 0, delta, c })
    }

    pub fn surviving(&self) -> Vec<f64> {
        self.learners.iter().map(|g| g.eps).collect()
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn accumulators(&self) -> (usize, f64, f64, &[f64]) {
        (self.tau, self.u, self.r, &self.l)
    }

    /// The acting learner (smallest surviving deviation value).
    pub fn acting(&self) -> &Learner {
        &self.learners[0].learner
    }

    pub fn learner(&self, eps: f64) -> Option<&Learner> {
        self.learners.iter().find(|g| g.eps == eps).map(|g| &g.learner)
    }

    pub fn select(&self, task: usize, pool: &[Vec<f64>]) -> Result<AdaChoice> {
        let g = &self.learners[0];
        Ok(AdaChoice { scan: g.learner.scan(task, pool)?, eps: g.eps })
    }

    /// Feeds the observation of the chosen action to every learner, runs the
    /// misspecification test and returns the evicted value, if any.
    pub fn observe(&mut self, choice: &AdaChoice, obs: Observation) -> Result<Option<f64>> {
        let mut lcbs = Vec::with_capacity(self.learners.len());
        for g in &self.learners {
            lcbs.push(g.learner.bounds(obs.task, &obs.point)?.0);
        }
        self.tau += 1;
        self.u += obs.reward;
        self.r += 2.0 * choice.scan.beta * choice.scan.sigma;
        for (acc, v) in self.l.iter_mut().zip(&lcbs) {
            *acc += v;
        }
        for g in &mut self.learners {
            g.learner.observe(obs.clone())?;
        }
        let max_l = self.l.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if misspec_test(self.tau, self.u, self.r, max_l, self.delta, self.c) {
            let evicted = self.learners.remove(0).eps;
            self.l.remove(0);
            self.reset();
            if self.learners.is_empty() {
                return Err(Error::AllLearnersEvicted);
            }
            return Ok(Some(evicted));
        }
        Ok(None)
    }

    fn reset(&mut self) {
        self.tau = 0;
        self.u = 0.0;
        self.r = 0.0;
        self.l.iter_mut().for_each(|v| *v = 0.0);
        self.epoch += 1;
    }
}
