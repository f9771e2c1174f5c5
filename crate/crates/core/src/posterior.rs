//! Incremental multitask kernel ridge regression.
//!
//! The state keeps a Cholesky factor of `K_t + λI` that grows by one row per
//! observation, so an update costs `O(t²)`. The running log-determinant of
//! `I + λ⁻¹K_t` falls out of the new pivot, and a second set of factors over
//! each task's own points (base kernel only) tracks per-task information gain.

use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::cholesky::IncrementalCholesky;
use crate::error::{Error, Result};
use crate::taskalgebra::{dot, mt_feature_map, BaseKernel, TaskCoupling};

/// Drift above which the running factor is rebuilt from scratch.
pub const REFACTOR_DRIFT: f64 = 1e-6;

/// One `(task, point, reward)` triplet with its step counter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    /// Zero-based task index.
    pub task: usize,
    pub point: Vec<f64>,
    pub reward: f64,
    pub step: u64,
}

impl Observation {
    pub fn new(task: usize, point: Vec<f64>, reward: f64, step: u64) -> Self {
        Self { task, point, reward, step }
    }
}

/// Posterior mean and variance at a query.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub mean: f64,
    pub variance: f64,
}

impl Prediction {
    pub fn std_dev(&self) -> f64 {
        self.variance.sqrt()
    }
}

#[derive(Debug, Clone)]
pub struct PosteriorState {
    coupling: TaskCoupling,
    base: BaseKernel,
    ridge: f64,
    log: Vec<Observation>,
    chol: IncrementalCholesky,
    alpha: Vec<f64>,
    /// `ln|I + λ⁻¹K_t|`, i.e. twice the multitask information gain.
    logdet_mt: f64,
    task_chol: Vec<IncrementalCholesky>,
    task_members: Vec<Vec<usize>>,
    /// Twice the per-task information gains.
    task_logdet: Vec<f64>,
    refactor_count: usize,
}

impl PosteriorState {
    pub fn new(coupling: TaskCoupling, base: BaseKernel, ridge: f64) -> Result<Self> {
        if !(ridge > 0.0 && ridge.is_finite()) {
            return Err(Error::InvalidParameter(format!("ridge must be positive, got {ridge}")));
        }
        if base.input_dim == 0 {
            return Err(Error::InvalidParameter("input dimension must be >= 1".into()));
        }
        let n = coupling.n_tasks();
        Ok(Self {
            coupling,
            base,
            ridge,
            log: Vec::new(),
            chol: IncrementalCholesky::new(),
            alpha: Vec::new(),
            logdet_mt: 0.0,
            task_chol: vec![IncrementalCholesky::new(); n],
            task_members: vec![Vec::new(); n],
            task_logdet: vec![0.0; n],
            refactor_count: 0,
        })
    }

    /// Builds a state by replaying a whole log.
    pub fn fit(
        coupling: TaskCoupling,
        base: BaseKernel,
        ridge: f64,
        log: impl IntoIterator<Item = Observation>,
    ) -> Result<Self> {
        let mut s = Self::new(coupling, base, ridge)?;
        for obs in log {
            s.update(obs)?;
        }
        Ok(s)
    }

    pub fn coupling(&self) -> &TaskCoupling {
        &self.coupling
    }

    pub fn base(&self) -> &BaseKernel {
        &self.base
    }

    pub fn ridge(&self) -> f64 {
        self.ridge
    }

    pub fn log(&self) -> &[Observation] {
        &self.log
    }

    pub fn len(&self) -> usize {
        self.log.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log.is_empty()
    }

    pub fn n_tasks(&self) -> usize {
        self.coupling.n_tasks()
    }

    pub fn refactor_count(&self) -> usize {
        self.refactor_count
    }

    pub fn jitter_events(&self) -> usize {
        self.chol.jitter_events()
    }

    /// The lower-triangular factor of `K_t + λI`.
    pub fn cholesky_factor(&self) -> DMatrix<f64> {
        self.chol.to_matrix()
    }

    fn check_query(&self, i: usize, x: &[f64]) -> Result<()> {
        self.coupling.check_task(i)?;
        self.base.check_point(x)
    }

    #[inline]
    fn kernel(&self, i: usize, x: &[f64], j: usize, y: &[f64]) -> f64 {
        self.coupling.entry_unchecked(i, j) * self.base.eval(x, y)
    }

    /// `k_t(i, x)`.
    fn cross_kernel(&self, i: usize, x: &[f64]) -> Vec<f64> {
        self.log.iter().map(|o| self.kernel(i, x, o.task, &o.point)).collect()
    }

    /// Multitask Gram matrix `K_t` of the current log.
    pub fn gram(&self) -> DMatrix<f64> {
        let t = self.len();
        DMatrix::from_fn(t, t, |a, b| {
            let (oa, ob) = (&self.log[a], &self.log[b]);
            self.kernel(oa.task, &oa.point, ob.task, &ob.point)
        })
    }

    /// Appends one observation.
    pub fn update(&mut self, obs: Observation) -> Result<()> {
        self.check_query(obs.task, &obs.point)?;
        if !obs.reward.is_finite() {
            return Err(Error::InvalidParameter("reward must be finite".into()));
        }
        if let Some(last) = self.log.last() {
            if obs.step <= last.step {
                return Err(Error::InvalidParameter(format!(
                    "observation steps must increase: {} after {}",
                    obs.step, last.step
                )));
            }
        }

        let cross = self.cross_kernel(obs.task, &obs.point);
        let self_k = self.kernel(obs.task, &obs.point, obs.task, &obs.point);
        let pivot_sq = self.chol.push(&cross, self_k + self.ridge)?;
        self.logdet_mt += (pivot_sq / self.ridge).ln();

        let members = &self.task_members[obs.task];
        let task_cross: Vec<f64> = members
            .iter()
            .map(|&s| self.base.eval(&self.log[s].point, &obs.point))
            .collect();
        let base_self = self.base.eval(&obs.point, &obs.point);
        let task_pivot_sq = self.task_chol[obs.task].push(&task_cross, base_self + self.ridge)?;
        self.task_logdet[obs.task] += (task_pivot_sq / self.ridge).ln();

        self.task_members[obs.task].push(self.log.len());
        self.log.push(obs);

        let t = self.log.len();
        if t >= 8 && (t.is_power_of_two() || t.is_multiple_of(256)) {
            self.check_drift()?;
        }
        self.refresh_alpha();
        Ok(())
    }

    fn refresh_alpha(&mut self) {
        let y: Vec<f64> = self.log.iter().map(|o| o.reward).collect();
        self.alpha = self.chol.solve(&y);
    }

    /// Relative reconstruction error of the running factor.
    pub fn reconstruction_drift(&self) -> f64 {
        let mut m = self.gram();
        for j in 0..m.nrows() {
            m[(j, j)] += self.ridge;
        }
        self.chol.reconstruction_drift(&m)
    }

    fn check_drift(&mut self) -> Result<()> {
        if self.reconstruction_drift() > REFACTOR_DRIFT {
            self.refactorize()?;
        }
        Ok(())
    }

    /// Rebuilds every factor and running log-determinant from the log.
    pub fn refactorize(&mut self) -> Result<()> {
        let mut m = self.gram();
        for j in 0..m.nrows() {
            m[(j, j)] += self.ridge;
        }
        self.chol = IncrementalCholesky::factorize(&m)?;
        let t = self.len() as f64;
        self.logdet_mt = self.chol.log_det() - t * self.ridge.ln();
        for task in 0..self.n_tasks() {
            let pts: Vec<Vec<f64>> =
                self.task_members[task].iter().map(|&s| self.log[s].point.clone()).collect();
            let mut g = self.base.gram(&pts);
            for j in 0..g.nrows() {
                g[(j, j)] += self.ridge;
            }
            self.task_chol[task] = IncrementalCholesky::factorize(&g)?;
            self.task_logdet[task] = self.task_chol[task].log_det() - pts.len() as f64 * self.ridge.ln();
        }
        self.refactor_count += 1;
        self.refresh_alpha();
        Ok(())
    }

    /// Posterior mean `μ_t(i, x)`; zero on an empty log.
    pub fn mean(&self, i: usize, x: &[f64]) -> Result<f64> {
        self.check_query(i, x)?;
        Ok(self.mean_unchecked(i, x))
    }

    fn mean_unchecked(&self, i: usize, x: &[f64]) -> f64 {
        self.log
            .iter()
            .zip(&self.alpha)
            .map(|(o, a)| a * self.kernel(i, x, o.task, &o.point))
            .sum()
    }

    /// Posterior variance `σ_t²(i, x)`, clamped at zero.
    pub fn variance(&self, i: usize, x: &[f64]) -> Result<f64> {
        self.check_query(i, x)?;
        Ok(self.predict_unchecked(i, x).variance)
    }

    pub fn predict(&self, i: usize, x: &[f64]) -> Result<Prediction> {
        self.check_query(i, x)?;
        Ok(self.predict_unchecked(i, x))
    }

    fn predict_unchecked(&self, i: usize, x: &[f64]) -> Prediction {
        let mut k = self.cross_kernel(i, x);
        let mean = dot(&k, &self.alpha);
        self.chol.solve_lower_in_place(&mut k);
        let prior = self.kernel(i, x, i, x);
        let variance = (prior - k.iter().map(|v| v * v).sum::<f64>()).max(0.0);
        Prediction { mean, variance }
    }

    /// Predictions for one task over many points. Linear base kernels use a
    /// `d×d` projection of the posterior, so each point costs `O(d²)`.
    pub fn predict_many(&self, i: usize, points: &[Vec<f64>]) -> Result<Vec<Prediction>> {
        self.coupling.check_task(i)?;
        for p in points {
            self.base.check_point(p)?;
        }
        if self.base.is_linear() && points.len() > self.len() {
            let view = self.linear_view(i);
            Ok(points.iter().map(|p| view.predict(p)).collect())
        } else {
            Ok(points.iter().map(|p| self.predict_unchecked(i, p)).collect())
        }
    }

    /// For a linear base kernel, task `i`'s posterior as `μ(x) = w·x` and
    /// `σ²(x) = xᵀCx`.
    pub fn linear_view(&self, i: usize) -> LinearTaskView {
        let d = self.base.input_dim;
        let t = self.len();
        let s = self.base.scale;
        // Z[s, :] = scale * k_T(i, i_s) * x_s
        let mut weights = vec![0.0; d];
        let mut cols: Vec<Vec<f64>> = vec![vec![0.0; t]; d];
        for (row, o) in self.log.iter().enumerate() {
            let c = s * self.coupling.entry_unchecked(i, o.task);
            for k in 0..d {
                let z = c * o.point[k];
                weights[k] += z * self.alpha[row];
                cols[k][row] = z;
            }
        }
        for col in cols.iter_mut() {
            self.chol.solve_lower_in_place(col);
        }
        let prior = s * self.coupling.diag_entry();
        let cov = DMatrix::from_fn(d, d, |a, b| {
            let reduction = dot(&cols[a], &cols[b]);
            if a == b {
                prior - reduction
            } else {
                -reduction
            }
        });
        LinearTaskView { weights: DVector::from_vec(weights), cov }
    }

    /// `γ_t^mt = ½ ln|I + λ⁻¹K_t|`.
    pub fn info_gain_mt(&self) -> f64 {
        0.5 * self.logdet_mt
    }

    /// Per-task `½ ln|I + λ⁻¹K_{t_i}|` over each task's own points under the
    /// base kernel.
    pub fn info_gain_per_task(&self) -> Vec<f64> {
        self.task_logdet.iter().map(|v| 0.5 * v).collect()
    }

    /// Running maximum of the per-task gains, used as the single-task gain
    /// in the confidence widths.
    pub fn info_gain_st(&self) -> f64 {
        self.task_logdet.iter().fold(0.0_f64, |m, v| m.max(0.5 * v))
    }

    /// Number of observations per task.
    pub fn task_counts(&self) -> Vec<usize> {
        self.task_members.iter().map(Vec::len).collect()
    }

    /// `Σ_l Tr(K_l (K_l + c I)⁻¹)` over the per-task base-kernel Gram matrices.
    pub fn effective_dimension_sum(&self, c: f64) -> f64 {
        let mut total = 0.0;
        for members in &self.task_members {
            if members.is_empty() {
                continue;
            }
            let pts: Vec<Vec<f64>> = members.iter().map(|&s| self.log[s].point.clone()).collect();
            let eig = self.base.gram(&pts).symmetric_eigen();
            total += eig.eigenvalues.iter().map(|&v| {
                let v = v.max(0.0);
                v / (v + c)
            }).sum::<f64>();
        }
        total
    }

    /// Writes the log as CSV with header `step,task,x_1..x_d,y`.
    pub fn write_log_csv<W: Write>(&self, writer: W) -> Result<()> {
        write_log_csv(&self.log, self.base.input_dim, writer)
    }
}

/// Task posterior for linear base kernels.
#[derive(Debug, Clone)]
pub struct LinearTaskView {
    pub weights: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl LinearTaskView {
    #[inline]
    pub fn predict(&self, x: &[f64]) -> Prediction {
        let d = x.len();
        let mut mean = 0.0;
        let mut var = 0.0;
        for a in 0..d {
            mean += self.weights[a] * x[a];
            let mut row = 0.0;
            for b in 0..d {
                row += self.cov[(a, b)] * x[b];
            }
            var += x[a] * row;
        }
        Prediction { mean, variance: var.max(0.0) }
    }
}

/// Upper bounds on the multitask information gain in terms of a single-task
/// gain: `(N·γ + (b/2)(T − N/4) − (T/2)ln(1+b), γ + T/(λb))`. The second bound
/// is `+∞` at `b = 0`.
pub fn info_gain_bounds(b: f64, ridge: f64, n_tasks: usize, horizon: usize, gamma_st: f64) -> Result<(f64, f64)> {
    if !(ridge > 0.0 && ridge <= 1.0) {
        return Err(Error::Precondition(format!("ridge must lie in (0, 1], got {ridge}")));
    }
    if n_tasks < 2 {
        return Err(Error::Precondition("at least two tasks required".into()));
    }
    if !(b >= 0.0 && b.is_finite()) {
        return Err(Error::Precondition(format!("b must be finite and >= 0, got {b}")));
    }
    let n = n_tasks as f64;
    let t = horizon as f64;
    let first = n * gamma_st + 0.5 * b * (t - n / 4.0) - 0.5 * t * (1.0 + b).ln();
    let second = if b == 0.0 { f64::INFINITY } else { gamma_st + t / (ridge * b) };
    Ok((first, second))
}

/// Feature-space (primal) solution of the same regression, available for
/// linear base kernels: `w = (Ψ̃ᵀΨ̃ + λI)⁻¹Ψ̃ᵀy`.
#[derive(Debug, Clone)]
pub struct PrimalPosterior {
    coupling: TaskCoupling,
    base: BaseKernel,
    ridge: f64,
    weights: DVector<f64>,
    precision_inv: DMatrix<f64>,
}

impl PrimalPosterior {
    pub fn fit(coupling: TaskCoupling, base: BaseKernel, ridge: f64, log: &[Observation]) -> Result<Self> {
        if !base.is_linear() {
            return Err(Error::UnsupportedKernel);
        }
        let dim = coupling.n_tasks() * base.input_dim;
        let mut precision = DMatrix::<f64>::identity(dim, dim) * ridge;
        let mut rhs = DVector::<f64>::zeros(dim);
        for o in log {
            let f = mt_feature_map(&coupling, &base, o.task, &o.point)?;
            precision += &f * f.transpose();
            rhs += &f * o.reward;
        }
        let precision_inv = precision
            .try_inverse()
            .ok_or_else(|| Error::SingularMatrix("primal precision".into()))?;
        let weights = &precision_inv * rhs;
        Ok(Self { coupling, base, ridge, weights, precision_inv })
    }

    pub fn predict(&self, i: usize, x: &[f64]) -> Result<Prediction> {
        let f = mt_feature_map(&self.coupling, &self.base, i, x)?;
        let mean = self.weights.dot(&f);
        let variance = (self.ridge * f.dot(&(&self.precision_inv * &f))).max(0.0);
        Ok(Prediction { mean, variance })
    }
}

/// Writes an observation log as CSV with header `step,task,x_1..x_d,y`.
pub fn write_log_csv<W: Write>(log: &[Observation], dim: usize, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["step".to_string(), "task".to_string()];
    header.extend((1..=dim).map(|k| format!("x_{k}")));
    header.push("y".into());
    w.write_record(&header)?;
    for o in log {
        if o.point.len() != dim {
            return Err(Error::DimensionMismatch { expected: dim, got: o.point.len() });
        }
        let mut rec = vec![o.step.to_string(), o.task.to_string()];
        rec.extend(o.point.iter().map(|v| format!("{v:?}")));
        rec.push(format!("{:?}", o.reward));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a log written by [`write_log_csv`].
pub fn read_log_csv<R: Read>(reader: R) -> Result<Vec<Observation>> {
    let mut r = csv::Reader::from_reader(reader);
    let headers = r.headers()?.clone();
    let width = headers.len();
    if width < 4 || &headers[0] != "step" || &headers[1] != "task" || &headers[width - 1] != "y" {
        return Err(Error::Dataset("expected header step,task,x_1..x_d,y".into()));
    }
    let dim = width - 3;
    let mut out = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let parse = |k: usize| -> Result<f64> {
            rec[k]
                .trim()
                .parse::<f64>()
                .map_err(|e| Error::Dataset(format!("row {}: column {k}: {e}", line + 1)))
        };
        let step = rec[0].trim().parse::<u64>().map_err(|e| Error::Dataset(format!("row {}: step: {e}", line + 1)))?;
        let task = rec[1].trim().parse::<usize>().map_err(|e| Error::Dataset(format!("row {}: task: {e}", line + 1)))?;
        let point = (0..dim).map(|k| parse(2 + k)).collect::<Result<Vec<_>>>()?;
        let reward = parse(width - 1)?;
        out.push(Observation { task, point, reward, step });
    }
    Ok(out)
}
