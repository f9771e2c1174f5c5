//! Confidence widths for the multitask posterior and the `(b, λ)` selection rule.
//!
//! Each width holds with probability at least `1 − 2δ` for the `δ` stored in
//! [`WidthParams`]; no internal halving is applied.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::posterior::PosteriorState;
use crate::taskalgebra::{Similarity, TaskCoupling};

#[derive(Debug, Clone, PartialEq)]
pub struct WidthParams {
    /// Uniform bound `B` on the RKHS norms of the task functions.
    pub bound_b: f64,
    /// Task deviation `ε ∈ [0, 2]`.
    pub eps: f64,
    /// Confidence level; the widths fail with probability at most `2δ`.
    pub delta: f64,
    pub coupling: TaskCoupling,
    pub ridge: f64,
    /// Replace the large-b bias term with its data-dependent refinement.
    pub data_dependent_bias: bool,
}

impl WidthParams {
    pub fn new(bound_b: f64, eps: f64, delta: f64, coupling: TaskCoupling, ridge: f64) -> Result<Self> {
        let p = Self { bound_b, eps, delta, coupling, ridge, data_dependent_bias: false };
        p.validate()?;
        Ok(p)
    }

    pub fn with_data_dependent_bias(mut self, on: bool) -> Self {
        self.data_dependent_bias = on;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.bound_b > 0.0 && self.bound_b.is_finite()) {
            return Err(Error::InvalidParameter(format!("B must be positive, got {}", self.bound_b)));
        }
        if !(0.0..=2.0).contains(&self.eps) {
            return Err(Error::InvalidParameter(format!("eps must lie in [0, 2], got {}", self.eps)));
        }
        if !(self.delta > 0.0 && self.delta <= 1.0) {
            return Err(Error::InvalidParameter(format!("delta must lie in (0, 1], got {}", self.delta)));
        }
        if !(self.ridge > 0.0 && self.ridge.is_finite()) {
            return Err(Error::InvalidParameter(format!("ridge must be positive, got {}", self.ridge)));
        }
        Ok(())
    }

    /// Whether `λ ∈ [1/(1+b), 1]`, the range in which the widths are valid.
    pub fn ridge_in_valid_range(&self) -> bool {
        let lo = if self.coupling.is_pooled() { 0.0 } else { 1.0 / (1.0 + self.coupling.b()) };
        self.ridge >= lo * (1.0 - 1e-12) && self.ridge <= 1.0 + 1e-12
    }

    fn n(&self) -> f64 {
        self.coupling.n_tasks() as f64
    }

    fn noise_term(&self, gamma: f64, log_arg: f64) -> f64 {
        (2.0 * (gamma.max(0.0) + (log_arg / self.delta).ln())).max(0.0).sqrt() / self.ridge.sqrt()
    }
}

/// Which of the three widths attained the minimum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WidthBranch {
    Naive,
    SmallB,
    LargeB,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WidthReport {
    pub naive: f64,
    pub small_b: f64,
    pub large_b: f64,
    pub new: f64,
    pub branch: WidthBranch,
    pub t: usize,
    pub gamma_mt: f64,
    pub gamma_st: f64,
}

/// `B√(N(1+bε²)) + λ^{-½}√(2(γ_mt + ln(1/δ)))`.
pub fn beta_naive(params: &WidthParams, gamma_mt: f64, _t: usize) -> f64 {
    let n = params.n();
    let bias = match params.coupling.similarity() {
        Similarity::Finite(b) => params.bound_b * (n * (1.0 + b * params.eps * params.eps)).sqrt(),
        Similarity::Pooled if params.eps == 0.0 => params.bound_b * n.sqrt(),
        Similarity::Pooled => f64::INFINITY,
    };
    bias + params.noise_term(gamma_mt, 1.0)
}

/// `B(1+bε)√((1+bN)/(1+b)) + λ^{-½}√(2(1+bN)(γ_st + ln(N/δ)))`.
pub fn beta_small_b(params: &WidthParams, gamma_st: f64, _t: usize) -> f64 {
    let n = params.n();
    match params.coupling.similarity() {
        Similarity::Finite(b) => {
            let spread = 1.0 + b * n;
            let bias = params.bound_b * (1.0 + b * params.eps) * (spread / (1.0 + b)).sqrt();
            bias + spread.sqrt() * params.noise_term(gamma_st, n)
        }
        Similarity::Pooled => f64::INFINITY,
    }
}

/// The data-independent large-b width:
/// `B√((1+bε)²/(1+b) + 2bN/(1+b) + 2b(1+bε)²t²/(Nλ²(1+b)³)) + λ^{-½}√(2(γ_mt + ln(1/δ)))`.
pub fn beta_large_b(params: &WidthParams, gamma_mt: f64, t: usize) -> f64 {
    let n = params.n();
    let bias = match params.coupling.similarity() {
        Similarity::Finite(b) => {
            let g = 1.0 + b * params.eps;
            let lam = params.ridge;
            let tf = t as f64;
            let inner = g * g / (1.0 + b)
                + 2.0 * b * n / (1.0 + b)
                + 2.0 * b * g * g * tf * tf / (n * lam * lam * (1.0 + b).powi(3));
            params.bound_b * inner.sqrt()
        }
        Similarity::Pooled if params.eps == 0.0 => params.bound_b * (2.0 * n).sqrt(),
        Similarity::Pooled => f64::INFINITY,
    };
    bias + params.noise_term(gamma_mt, 1.0)
}

/// Large-b width with the bias bounded through the per-task effective
/// dimensions `Σ_l Tr(K_l(K_l + λ(1+b)I)⁻¹)` of the observed data.
pub fn beta_large_b_data_dependent(params: &WidthParams, state: &PosteriorState) -> f64 {
    let n = params.n();
    let bias = match params.coupling.similarity() {
        Similarity::Finite(b) => {
            let lam = params.ridge;
            let bb = params.bound_b;
            let g = 1.0 + b * params.eps;
            let c = lam * (1.0 + b);
            let d = n * bb / c + bb * g / c * state.effective_dimension_sum(c);
            (bb * bb * g * g / (1.0 + b) + lam * lam * b * (1.0 + b) / n * d * d).sqrt()
        }
        Similarity::Pooled if params.eps == 0.0 => params.bound_b * (2.0 * n).sqrt(),
        Similarity::Pooled => f64::INFINITY,
    };
    bias + params.noise_term(state.info_gain_mt(), 1.0)
}

fn assemble(naive: f64, small_b: f64, large_b: f64, t: usize, gamma_mt: f64, gamma_st: f64) -> WidthReport {
    let mut new = naive;
    let mut branch = WidthBranch::Naive;
    if small_b < new {
        new = small_b;
        branch = WidthBranch::SmallB;
    }
    if large_b < new {
        new = large_b;
        branch = WidthBranch::LargeB;
    }
    WidthReport { naive, small_b, large_b, new, branch, t, gamma_mt, gamma_st }
}

/// All three widths and their minimum; ties go to the earliest of naive,
/// small-b, large-b.
pub fn beta_new(params: &WidthParams, gamma_mt: f64, gamma_st: f64, t: usize) -> WidthReport {
    assemble(
        beta_naive(params, gamma_mt, t),
        beta_small_b(params, gamma_st, t),
        beta_large_b(params, gamma_mt, t),
        t,
        gamma_mt,
        gamma_st,
    )
}

/// Widths evaluated from a posterior's running information gains, with
/// `t` equal to the number of observations.
pub fn widths_for_state(params: &WidthParams, state: &PosteriorState) -> Result<WidthReport> {
    check_consistent(params, state)?;
    let t = state.len();
    let gamma_mt = state.info_gain_mt();
    let gamma_st = state.info_gain_st();
    let large_b = if params.data_dependent_bias {
        beta_large_b_data_dependent(params, state)
    } else {
        beta_large_b(params, gamma_mt, t)
    };
    Ok(assemble(
        beta_naive(params, gamma_mt, t),
        beta_small_b(params, gamma_st, t),
        large_b,
        t,
        gamma_mt,
        gamma_st,
    ))
}

fn check_consistent(params: &WidthParams, state: &PosteriorState) -> Result<()> {
    if params.coupling != *state.coupling() {
        return Err(Error::InconsistentParameters(format!(
            "width coupling {:?} differs from posterior coupling {:?}",
            params.coupling,
            state.coupling()
        )));
    }
    if (params.ridge - state.ridge()).abs() > 1e-12 * params.ridge.max(1.0) {
        return Err(Error::InconsistentParameters(format!(
            "width ridge {} differs from posterior ridge {}",
            params.ridge,
            state.ridge()
        )));
    }
    Ok(())
}

/// `(μ − β_new·σ, μ + β_new·σ)` at `(i, x)`.
pub fn interval(state: &PosteriorState, params: &WidthParams, i: usize, x: &[f64]) -> Result<(f64, f64)> {
    let report = widths_for_state(params, state)?;
    let p = state.predict(i, x)?;
    let half = report.new * p.std_dev();
    Ok((p.mean - half, p.mean + half))
}

/// Regime picked by [`select_b_lambda`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// `T ≤ N`: `b = N/ε²`, the large-b width governs.
    ShortHorizon,
    /// `ε ≤ N^{-1/4}T^{-1/2}`: `b = 1/ε²`, the large-b width governs.
    SimilarTasks,
    /// Otherwise `b = 0`, the small-b width governs.
    Independent,
    /// `ε = 0`: all tasks pooled.
    Pooled,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Selection {
    pub coupling: TaskCoupling,
    pub ridge: f64,
    pub regime: Regime,
}

impl Selection {
    pub fn b(&self) -> f64 {
        self.coupling.b()
    }

    /// Width rule associated with the regime.
    pub fn preferred_branch(&self) -> WidthBranch {
        match self.regime {
            Regime::Independent => WidthBranch::SmallB,
            Regime::ShortHorizon | Regime::SimilarTasks => WidthBranch::LargeB,
            Regime::Pooled => WidthBranch::Naive,
        }
    }
}

/// Matched ridge `(N+b)/(N+bN)`.
pub fn matched_ridge(b: f64, n_tasks: usize) -> f64 {
    let n = n_tasks as f64;
    if b.is_infinite() {
        1.0 / n
    } else {
        (n + b) / (n + b * n)
    }
}

/// Chooses `b` from the horizon and deviation, with the matched ridge.
pub fn select_b_lambda(n_tasks: usize, horizon: usize, eps: f64) -> Result<Selection> {
    if n_tasks == 0 || horizon == 0 {
        return Err(Error::InvalidParameter("N and T must be at least 1".into()));
    }
    if !(0.0..=2.0).contains(&eps) {
        return Err(Error::InvalidParameter(format!("eps must lie in [0, 2], got {eps}")));
    }
    let n = n_tasks as f64;
    let t = horizon as f64;
    if eps == 0.0 {
        let coupling = TaskCoupling::pooled(n_tasks)?;
        return Ok(Selection { coupling, ridge: 1.0 / n, regime: Regime::Pooled });
    }
    let (b, regime) = if horizon <= n_tasks {
        (n / (eps * eps), Regime::ShortHorizon)
    } else if eps <= n.powf(-0.25) / t.sqrt() {
        (1.0 / (eps * eps), Regime::SimilarTasks)
    } else {
        (0.0, Regime::Independent)
    };
    let coupling = TaskCoupling::new(b, n_tasks)?;
    Ok(Selection { coupling, ridge: matched_ridge(b, n_tasks), regime })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::posterior::Observation;
    use crate::taskalgebra::BaseKernel;

    fn params(bb: f64, eps: f64, delta: f64, b: f64, n: usize, ridge: f64) -> WidthParams {
        WidthParams::new(bb, eps, delta, TaskCoupling::new(b, n).unwrap(), ridge).unwrap()
    }

    #[test]
    fn naive_examples() {
        assert_eq!(beta_naive(&params(1.0, 0.0, 1.0, 0.0, 4, 1.0), 0.0, 0), 2.0);
        let v = beta_naive(&params(1.0, 0.4, 1.0, 100.0, 20, 1.0), 0.0, 4);
        assert!((v - 340f64.sqrt()).abs() < 1e-12);
        assert!((v - 18.439).abs() < 1e-3);
        let p = params(1.0, 0.4, 0.1, 1.0, 4, 1.0);
        assert!(beta_naive(&p, 2.0, 0) > beta_naive(&p, 1.0, 0));
        let tighter = params(1.0, 0.4, 0.01, 1.0, 4, 1.0);
        assert!(beta_naive(&tighter, 1.0, 0) > beta_naive(&p, 1.0, 0));
    }

    #[test]
    fn small_b_examples() {
        assert_eq!(beta_small_b(&params(1.0, 0.0, 1.0, 0.0, 1, 1.0), 0.0, 0), 1.0);
        let p = params(1.0, 0.3, 0.2, 0.0, 5, 0.5);
        let expected = 1.0 + (2.0 * (0.7 + (5.0f64 / 0.2).ln())).sqrt() / 0.5f64.sqrt();
        assert!((beta_small_b(&p, 0.7, 3) - expected).abs() < 1e-12);

        let sel = select_b_lambda(20, 40, 0.4).unwrap();
        let p = WidthParams::new(1.0, 0.4, 0.1, TaskCoupling::new(0.5, 20).unwrap(), matched_ridge(0.5, 20)).unwrap();
        let lam: f64 = 20.5 / 30.0;
        let oracle = 1.2 * (11.0f64 / 1.5).sqrt() + (2.0 * 11.0 * (20.0f64 / 0.1).ln()).sqrt() / lam.sqrt();
        assert!((beta_small_b(&p, 0.0, 4) - oracle).abs() < 1e-12);
        assert_eq!(sel.b(), 0.0);
    }

    #[test]
    fn large_b_examples() {
        let p = params(1.0, 0.4, 0.3, 0.0, 6, 0.8);
        let expected = 1.0 + (2.0 * (1.5 + (1.0f64 / 0.3).ln())).sqrt() / 0.8f64.sqrt();
        assert!((beta_large_b(&p, 1.5, 9) - expected).abs() < 1e-12);

        let p = params(1.0, 0.4, 1.0, 1e6, 20, 1.0);
        let ratio = beta_large_b(&p, 0.0, 4) / beta_naive(&p, 0.0, 4);
        assert!((ratio * 20f64.sqrt() - 1.0).abs() < 0.05);

        let p = params(1.0, 0.4, 1.0, 2.0, 5, 1.0);
        assert!(beta_large_b(&p, 0.0, 1000) > beta_large_b(&p, 0.0, 10));
        assert!(beta_large_b(&p, 0.0, 100_000) > 1e3);
    }

    #[test]
    fn new_is_min_with_tie_rule() {
        let p = params(1.0, 0.0, 1.0, 0.0, 1, 1.0);
        let r = beta_new(&p, 0.0, 0.0, 0);
        assert_eq!((r.naive, r.small_b, r.large_b), (1.0, 1.0, 1.0));
        assert_eq!(r.branch, WidthBranch::Naive);

        let p = params(1.0, 0.4, 1.0, 0.0, 20, 1.0);
        let r = beta_new(&p, 0.0, 0.0, 4);
        assert!((r.naive / r.new - 20f64.sqrt()).abs() < 1e-9);

        for k in 0..40 {
            let b = 10f64.powf(-4.0 + 12.0 * k as f64 / 39.0);
            let p = params(1.0, 0.4, 1.0, b, 20, 1.0);
            let r = beta_new(&p, 0.0, 0.0, 4);
            assert!(r.new <= r.naive);
            assert_eq!(r.new, r.naive.min(r.small_b).min(r.large_b));
        }
    }

    #[test]
    fn small_b_wins_at_zero_when_gains_match() {
        // with the multitask gain at least γ_st + ln N the small-b width is the minimum at b = 0
        let p = params(1.0, 0.4, 0.1, 0.0, 5, 1.0);
        let gst = 1.0;
        let r = beta_new(&p, gst + 5f64.ln() + 0.5, gst, 10);
        assert_eq!(r.branch, WidthBranch::SmallB);
    }

    #[test]
    fn pooled_widths() {
        let p = WidthParams::new(1.0, 0.0, 1.0, TaskCoupling::pooled(4).unwrap(), 0.25).unwrap();
        assert_eq!(beta_naive(&p, 0.0, 3), 2.0);
        assert!(beta_small_b(&p, 0.0, 3).is_infinite());
        assert!((beta_large_b(&p, 0.0, 3) - 8f64.sqrt()).abs() < 1e-15);
        let p = WidthParams { eps: 0.1, ..p };
        assert!(beta_naive(&p, 0.0, 3).is_infinite());
    }

    #[test]
    fn selection_examples() {
        let s = select_b_lambda(20, 10, 0.5).unwrap();
        assert!((s.b() - 80.0).abs() < 1e-12);
        assert!((s.ridge - 100.0 / 1620.0).abs() < 1e-12);
        assert_eq!(s.regime, Regime::ShortHorizon);

        let s = select_b_lambda(4, 100, 0.05).unwrap();
        assert!((s.b() - 400.0).abs() < 1e-9);
        assert!((s.ridge - 404.0 / 1604.0).abs() < 1e-12);
        assert_eq!(s.preferred_branch(), WidthBranch::LargeB);

        let s = select_b_lambda(4, 100, 1.0).unwrap();
        assert_eq!((s.b(), s.ridge), (0.0, 1.0));

        let s = select_b_lambda(4, 100, 0.0).unwrap();
        assert!(s.coupling.is_pooled());
        assert_eq!(s.ridge, 0.25);
    }

    #[test]
    fn interval_on_empty_state() {
        let coupling = TaskCoupling::new(0.0, 2).unwrap();
        let state = PosteriorState::new(coupling, BaseKernel::linear(2), 1.0).unwrap();
        let p = WidthParams::new(1.0, 0.0, 1.0, coupling, 1.0).unwrap();
        let (lo, hi) = interval(&state, &p, 0, &[0.6, 0.8]).unwrap();
        assert!((lo + 1.0).abs() < 1e-12 && (hi - 1.0).abs() < 1e-12);

        let wrong = WidthParams::new(1.0, 0.0, 1.0, coupling, 0.5).unwrap();
        assert!(matches!(interval(&state, &wrong, 0, &[0.6, 0.8]), Err(Error::InconsistentParameters(_))));
    }

    #[test]
    fn data_dependent_bias_is_finite_and_reduces_to_prior_on_empty_state() {
        let coupling = TaskCoupling::new(3.0, 3).unwrap();
        let lam = matched_ridge(3.0, 3);
        let mut state = PosteriorState::new(coupling, BaseKernel::linear(2), lam).unwrap();
        let p = WidthParams::new(1.0, 0.2, 0.1, coupling, lam).unwrap().with_data_dependent_bias(true);
        let empty = beta_large_b_data_dependent(&p, &state);
        let d = 3.0 / (lam * 4.0);
        let bias = (1.6f64.powi(2) / 4.0 + lam * lam * 3.0 * 4.0 / 3.0 * d * d).sqrt();
        assert!((empty - bias - (2.0 * 10f64.ln()).sqrt() / lam.sqrt()).abs() < 1e-12);
        for s in 1..=10u64 {
            state.update(Observation::new((s % 3) as usize, vec![1.0, s as f64 * 0.1], 0.0, s)).unwrap();
        }
        let r = widths_for_state(&p, &state).unwrap();
        assert!(r.large_b.is_finite() && r.large_b > 0.0);
    }
}
