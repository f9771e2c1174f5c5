//! Fast numerical self-checks run by the `validate` subcommand.

use rand::Rng;

use multitask_ucb::confidence::{beta_new, matched_ridge, WidthParams};
use multitask_ucb::envs::{generate_synthetic, SyntheticSpec};
use multitask_ucb::policies::{Learner, Preset};
use multitask_ucb::posterior::{Observation, PosteriorState, PrimalPosterior};
use multitask_ucb::rng::{stream, Stream};
use multitask_ucb::sim::{run_online, OnlinePolicy, RunOptions};
use multitask_ucb::taskalgebra::{BaseKernel, TaskCoupling, TaskPower};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub pass: bool,
    pub detail: String,
}

fn random_log<R: Rng>(rng: &mut R, n: usize, d: usize, t: usize) -> Vec<Observation> {
    (0..t)
        .map(|s| {
            let x = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
            Observation::new(rng.random_range(0..n), x, rng.random_range(-2.0..2.0), s as u64 + 1)
        })
        .collect()
}

fn renumber(log: impl Iterator<Item = Observation>) -> Vec<Observation> {
    log.enumerate().map(|(s, o)| Observation::new(0, o.point, o.reward, s as u64 + 1)).collect()
}

fn limits() -> Result<Check, CliError> {
    let mut rng = stream(1, Stream::Environment);
    let (n, d, lam) = (3, 4, 0.7);
    let base = BaseKernel::squared_exponential(d, 1.0)?;
    let log = random_log(&mut rng, n, d, 15);
    let ind = PosteriorState::fit(TaskCoupling::new(0.0, n)?, base, lam, log.clone())?;
    let pooled = PosteriorState::fit(TaskCoupling::pooled(n)?, base, lam, log.clone())?;
    let single = PosteriorState::fit(TaskCoupling::new(0.0, 1)?, base, lam * n as f64, renumber(log.iter().cloned()))?;
    let per_task: Vec<PosteriorState> = (0..n)
        .map(|i| {
            let own = renumber(log.iter().filter(|o| o.task == i).cloned());
            PosteriorState::fit(TaskCoupling::new(0.0, 1)?, base, lam, own)
        })
        .collect::<Result<_, _>>()?;
    let (mut e_ind, mut e_pool) = (0.0_f64, 0.0_f64);
    for _ in 0..50 {
        let i = rng.random_range(0..n);
        let x: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let a = ind.predict(i, &x)?;
        let b = per_task[i].predict(0, &x)?;
        e_ind = e_ind.max((a.mean - b.mean).abs()).max((a.variance - b.variance).abs());
        e_pool = e_pool.max((pooled.mean(i, &x)? - single.mean(0, &x)?).abs());
    }
    Ok(Check {
        name: "independent and pooled limits",
        pass: e_ind <= 1e-8 && e_pool <= 1e-6,
        detail: format!("independent {e_ind:.2e}, pooled {e_pool:.2e}"),
    })
}

fn primal_dual() -> Result<Check, CliError> {
    let mut rng = stream(2, Stream::Environment);
    let coupling = TaskCoupling::new(0.8, 3)?;
    let base = BaseKernel::linear(3);
    let log = random_log(&mut rng, 3, 3, 20);
    let dual = PosteriorState::fit(coupling, base, 0.5, log.clone())?;
    let primal = PrimalPosterior::fit(coupling, base, 0.5, &log)?;
    let mut worst = 0.0_f64;
    for _ in 0..50 {
        let i = rng.random_range(0..3);
        let x: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let a = dual.predict(i, &x)?;
        let p = primal.predict(i, &x)?;
        worst = worst.max((a.mean - p.mean).abs()).max((a.variance - p.variance).abs());
    }
    Ok(Check { name: "feature-space and kernel solutions", pass: worst <= 1e-8, detail: format!("max-abs {worst:.2e}") })
}

fn task_algebra() -> Result<Check, CliError> {
    let mut worst = 0.0_f64;
    for &b in &[0.0, 0.01, 1.0, 100.0, 1e6] {
        for n in 1..6 {
            let c = TaskCoupling::new(b, n)?;
            let prod = c.task_gram() * c.matrix_power(TaskPower::One)?;
            for r in 0..n {
                for k in 0..n {
                    let id = if r == k { 1.0 } else { 0.0 };
                    worst = worst.max((prod[(r, k)] - id).abs());
                }
            }
        }
    }
    Ok(Check { name: "task kernel inverse", pass: worst <= 1e-10, detail: format!("max-abs {worst:.2e}") })
}

fn widths() -> Result<Check, CliError> {
    let mut min_ok = true;
    for k in 0..50 {
        let b = 10f64.powf(-4.0 + 8.0 * k as f64 / 49.0);
        let p = WidthParams::new(1.0, 0.4, 0.1, TaskCoupling::new(b, 5)?, matched_ridge(b, 5))?;
        let r = beta_new(&p, 3.0, 1.0, 50);
        min_ok &= r.new == r.naive.min(r.small_b).min(r.large_b) && r.new <= r.naive;
    }
    let p = WidthParams::new(1.0, 0.4, 1.0, TaskCoupling::new(0.0, 20)?, 1.0)?;
    let r = beta_new(&p, 0.0, 0.0, 4);
    let ratio = r.naive / r.new;
    Ok(Check {
        name: "width structure",
        pass: min_ok && (ratio - 20f64.sqrt()).abs() <= 1e-9,
        detail: format!("new = min on grid: {min_ok}, ratio at b=0, N=20: {ratio:.10}"),
    })
}

fn variance_cap() -> Result<Check, CliError> {
    let spec = SyntheticSpec { pool_size: 500, ..SyntheticSpec::new(3, 4, 0.4) };
    let env = generate_synthetic(&spec, 3)?;
    let base = env.normalized_linear_kernel()?;
    let (bb, eps) = env.linear_constants(&base, 1.0)?;
    let learner = Learner::preset(Preset::Improved { b: 1.0 }, base, 4, bb, eps, 0.1)?;
    let trace = run_online(&env, OnlinePolicy::Ucb(learner), 3, &RunOptions::new(50))?;
    let excess = trace.max_variance() - trace.ridge;
    Ok(Check {
        name: "posterior variance cap",
        pass: excess <= 1e-10,
        detail: format!("max (sigma^2 - lambda) = {excess:.2e}"),
    })
}

pub fn run_checks() -> Result<Vec<Check>, CliError> {
    Ok(vec![limits()?, primal_dual()?, task_algebra()?, widths()?, variance_cap()?])
}

#[cfg(test)]
mod tests {
    #[test]
    fn all_checks_pass() {
        for c in super::run_checks().unwrap() {
            assert!(c.pass, "{}: {}", c.name, c.detail);
        }
    }
}
