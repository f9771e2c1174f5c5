//! Ground-truth environments: synthetic linear tasks and tabular reward pools.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream, Stream};
use crate::taskalgebra::{dot, BaseKernel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub dim: usize,
    pub n_tasks: usize,
    /// Mixing weight between the shared model and each task's own deviation.
    pub dev_delta: f64,
    #[serde(default = "default_pool_size")]
    pub pool_size: usize,
    #[serde(default = "default_radius")]
    pub sphere_radius: f64,
    #[serde(default = "default_noise")]
    pub noise_sigma: f64,
}

fn default_pool_size() -> usize {
    10_000
}

fn default_radius() -> f64 {
    10.0
}

fn default_noise() -> f64 {
    1.0
}

impl SyntheticSpec {
    pub fn new(dim: usize, n_tasks: usize, dev_delta: f64) -> Self {
        Self {
            dim,
            n_tasks,
            dev_delta,
            pool_size: default_pool_size(),
            sphere_radius: default_radius(),
            noise_sigma: default_noise(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.n_tasks == 0 || self.pool_size == 0 {
            return Err(Error::InvalidParameter("dim, n_tasks and pool_size must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.dev_delta) {
            return Err(Error::InvalidParameter(format!("dev_delta must lie in [0, 1], got {}", self.dev_delta)));
        }
        if !(self.sphere_radius > 0.0 && self.sphere_radius.is_finite()) {
            return Err(Error::InvalidParameter("sphere_radius must be positive".into()));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::InvalidParameter("noise_sigma must be nonnegative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
enum TaskModel {
    Linear { weights: Vec<Vec<f64>> },
    Tabular,
}

/// A fixed multitask problem: per-task candidate pools with known means.
#[derive(Debug, Clone, PartialEq)]
pub struct Environment {
    model: TaskModel,
    labels: Vec<String>,
    input_dim: usize,
    pools: Vec<Arc<Vec<Vec<f64>>>>,
    means: Vec<Vec<f64>>,
    oracle_best: Vec<f64>,
    oracle_argmax: Vec<usize>,
    noise_sigma: f64,
}

fn random_unit<R: Rng>(rng: &mut R, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let norm = dot(&v, &v).sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|c| c / norm).collect();
        }
    }
}

/// Draws the shared model, the task deviations and the candidate pool from
/// the environment stream of `seed`.
pub fn generate_synthetic(spec: &SyntheticSpec, seed: u64) -> Result<Environment> {
    spec.validate()?;
    let mut rng = stream(seed, Stream::Environment);
    let shared = random_unit(&mut rng, spec.dim);
    let weights: Vec<Vec<f64>> = (0..spec.n_tasks)
        .map(|_| {
            let dev = random_unit(&mut rng, spec.dim);
            shared
                .iter()
                .zip(&dev)
                .map(|(s, d)| (1.0 - spec.dev_delta) * s + spec.dev_delta * d)
                .collect()
        })
        .collect();
    let pool: Vec<Vec<f64>> = (0..spec.pool_size)
        .map(|_| random_unit(&mut rng, spec.dim).into_iter().map(|c| c * spec.sphere_radius).collect())
        .collect();
    let pool = Arc::new(pool);
    let pools = vec![pool; spec.n_tasks];
    let means: Vec<Vec<f64>> = weights
        .iter()
        .zip(&pools)
        .map(|(w, p)| p.iter().map(|x| dot(w, x)).collect())
        .collect();
    let labels = (0..spec.n_tasks).map(|i| i.to_string()).collect();
    Ok(Environment::assemble(TaskModel::Linear { weights }, labels, spec.dim, pools, means, spec.noise_sigma))
}

impl Environment {
    fn assemble(
        model: TaskModel,
        labels: Vec<String>,
        input_dim: usize,
        pools: Vec<Arc<Vec<Vec<f64>>>>,
        means: Vec<Vec<f64>>,
        noise_sigma: f64,
    ) -> Self {
        let mut oracle_best = Vec::with_capacity(means.len());
        let mut oracle_argmax = Vec::with_capacity(means.len());
        for m in &means {
            let (k, v) = argmax(m);
            oracle_best.push(v);
            oracle_argmax.push(k);
        }
        Self { model, labels, input_dim, pools, means, oracle_best, oracle_argmax, noise_sigma }
    }

    pub fn n_tasks(&self) -> usize {
        self.pools.len()
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn noise_sigma(&self) -> f64 {
        self.noise_sigma
    }

    pub fn with_noise_sigma(mut self, sigma: f64) -> Result<Self> {
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(Error::InvalidParameter("noise sigma must be nonnegative".into()));
        }
        self.noise_sigma = sigma;
        Ok(self)
    }

    pub fn is_linear(&self) -> bool {
        matches!(self.model, TaskModel::Linear { .. })
    }

    /// Weight vectors of the linear task functions.
    pub fn task_weights(&self) -> Option<&[Vec<f64>]> {
        match &self.model {
            TaskModel::Linear { weights } => Some(weights),
            TaskModel::Tabular => None,
        }
    }

    fn check_task(&self, i: usize) -> Result<()> {
        if i >= self.n_tasks() {
            return Err(Error::TaskOutOfRange { index: i, n_tasks: self.n_tasks() });
        }
        Ok(())
    }

    pub fn pool(&self, i: usize) -> &[Vec<f64>] {
        &self.pools[i]
    }

    /// Shared handle to the pool of task `i`.
    pub fn pool_arc(&self, i: usize) -> Arc<Vec<Vec<f64>>> {
        Arc::clone(&self.pools[i])
    }

    /// True mean of task `i` at pool entry `k`.
    pub fn mean_at(&self, i: usize, k: usize) -> f64 {
        self.means[i][k]
    }

    pub fn means(&self, i: usize) -> &[f64] {
        &self.means[i]
    }

    pub fn oracle_best(&self, i: usize) -> f64 {
        self.oracle_best[i]
    }

    pub fn oracle_argmax(&self, i: usize) -> usize {
        self.oracle_argmax[i]
    }

    /// True mean at an arbitrary point (linear tasks) or a pool point (tabular).
    pub fn true_mean(&self, i: usize, x: &[f64]) -> Result<f64> {
        self.check_task(i)?;
        if x.len() != self.input_dim {
            return Err(Error::DimensionMismatch { expected: self.input_dim, got: x.len() });
        }
        match &self.model {
            TaskModel::Linear { weights } => Ok(dot(&weights[i], x)),
            TaskModel::Tabular => {
                let k = self.pools[i].iter().position(|p| p.as_slice() == x).ok_or(Error::UnknownPoint(i))?;
                Ok(self.means[i][k])
            }
        }
    }

    fn noise<R: Rng>(&self, rng: &mut R) -> f64 {
        let z: f64 = rng.sample(StandardNormal);
        self.noise_sigma * z
    }

    /// Noisy reward `f_i(x) + ξ`.
    pub fn feedback<R: Rng>(&self, i: usize, x: &[f64], rng: &mut R) -> Result<f64> {
        let m = self.true_mean(i, x)?;
        Ok(m + self.noise(rng))
    }

    /// Noisy reward at pool entry `k` of task `i`.
    pub fn feedback_at<R: Rng>(&self, i: usize, k: usize, rng: &mut R) -> Result<f64> {
        self.check_task(i)?;
        let m = *self.means[i].get(k).ok_or(Error::UnknownPoint(i))?;
        Ok(m + self.noise(rng))
    }

    /// Online regret of playing pool entry `k` for task `i`.
    pub fn online_regret_increment(&self, i: usize, k: usize) -> Result<f64> {
        self.check_task(i)?;
        let m = *self.means[i].get(k).ok_or(Error::UnknownPoint(i))?;
        Ok(self.oracle_best[i] - m)
    }

    /// Task-averaged regret of recommending pool entry `picks[i]` for every task.
    pub fn al_regret_increment(&self, picks: &[usize]) -> Result<f64> {
        if picks.len() != self.n_tasks() {
            return Err(Error::DimensionMismatch { expected: self.n_tasks(), got: picks.len() });
        }
        let mut total = 0.0;
        for (i, &k) in picks.iter().enumerate() {
            total += self.online_regret_increment(i, k)?;
        }
        Ok(total / self.n_tasks() as f64)
    }

    /// `max_i ‖f_i − f_avg‖ / B` with `B = max(max_i ‖f_i‖, bound_floor)`,
    /// using Euclidean norms of the weight vectors.
    pub fn true_epsilon(&self, bound_floor: f64) -> Result<f64> {
        Ok(self.linear_constants(&BaseKernel::linear(self.input_dim), bound_floor)?.1)
    }

    /// `(B, ε)` measured in the RKHS of a scaled linear kernel, where a weight
    /// vector `w` has norm `‖w‖/√scale`. `B` is clamped below at `bound_floor`.
    pub fn linear_constants(&self, kernel: &BaseKernel, bound_floor: f64) -> Result<(f64, f64)> {
        let weights = match &self.model {
            TaskModel::Linear { weights } => weights,
            TaskModel::Tabular => {
                return Err(Error::UnsupportedEnvironment(
                    "task deviation is only computable for linear tasks; supply eps and B".into(),
                ))
            }
        };
        if !kernel.is_linear() {
            return Err(Error::UnsupportedKernel);
        }
        let unit = 1.0 / kernel.scale.sqrt();
        let n = weights.len() as f64;
        let d = self.input_dim;
        let avg: Vec<f64> = (0..d).map(|k| weights.iter().map(|w| w[k]).sum::<f64>() / n).collect();
        let max_norm = weights.iter().map(|w| dot(w, w).sqrt() * unit).fold(0.0, f64::max);
        let max_dev = weights
            .iter()
            .map(|w| {
                let diff: Vec<f64> = w.iter().zip(&avg).map(|(a, b)| a - b).collect();
                dot(&diff, &diff).sqrt() * unit
            })
            .fold(0.0, f64::max);
        let bound = max_norm.max(bound_floor);
        if bound <= 0.0 {
            return Ok((bound, 0.0));
        }
        Ok((bound, (max_dev / bound).min(2.0)))
    }

    /// Largest squared norm over all pools.
    pub fn max_sq_norm(&self) -> f64 {
        self.pools.iter().flat_map(|p| p.iter()).map(|x| dot(x, x)).fold(0.0, f64::max)
    }

    /// Linear kernel scaled so that `k(x, x) ≤ 1` on every pool.
    pub fn normalized_linear_kernel(&self) -> Result<BaseKernel> {
        let m = self.max_sq_norm();
        let scale = if m > 0.0 { 1.0 / m } else { 1.0 };
        BaseKernel::linear(self.input_dim).with_scale(scale)
    }

    /// Writes the environment in the tabular CSV format
    /// `task,x_1..x_d,reward` using the true means as rewards.
    pub fn write_dataset<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["task".to_string()];
        header.extend((1..=self.input_dim).map(|k| format!("x_{k}")));
        header.push("reward".into());
        w.write_record(&header)?;
        for (i, pool) in self.pools.iter().enumerate() {
            for (x, m) in pool.iter().zip(&self.means[i]) {
                let mut rec = vec![self.labels[i].clone()];
                rec.extend(x.iter().map(|v| format!("{v:?}")));
                rec.push(format!("{m:?}"));
                w.write_record(&rec)?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

fn argmax(values: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::NEG_INFINITY);
    for (k, &v) in values.iter().enumerate() {
        if v > best.1 {
            best = (k, v);
        }
    }
    best
}

/// Options for reading a tabular dataset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DatasetOptions {
    /// Standardize rewards to zero mean and unit variance per task.
    pub standardize: bool,
    pub noise_sigma: f64,
}

impl Default for DatasetOptions {
    fn default() -> Self {
        Self { standardize: false, noise_sigma: 1.0 }
    }
}

/// Reads a `task,x_1..x_d,reward` CSV. Task labels are indexed in order of
/// first appearance.
pub fn read_dataset<R: Read>(reader: R, options: DatasetOptions) -> Result<Environment> {
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = r.headers()?.clone();
    let width = headers.len();
    if width < 3 || &headers[0] != "task" || &headers[width - 1] != "reward" {
        return Err(Error::Dataset("expected header task,x_1,...,x_d,reward".into()));
    }
    for (k, h) in headers.iter().enumerate().take(width - 1).skip(1) {
        if h != format!("x_{k}") {
            return Err(Error::Dataset(format!("column {k} should be named x_{k}, found {h:?}")));
        }
    }
    let dim = width - 2;
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut labels: Vec<String> = Vec::new();
    let mut pools: Vec<Vec<Vec<f64>>> = Vec::new();
    let mut means: Vec<Vec<f64>> = Vec::new();
    for (row, rec) in r.records().enumerate() {
        let rec = rec?;
        let line = row + 2;
        if rec.len() != width {
            return Err(Error::Dataset(format!("line {line}: expected {width} fields, found {}", rec.len())));
        }
        let label = rec[0].to_string();
        if label.is_empty() {
            return Err(Error::Dataset(format!("line {line}: empty task label")));
        }
        let parse = |k: usize| -> Result<f64> {
            let v: f64 = rec[k]
                .parse()
                .map_err(|e| Error::Dataset(format!("line {line}, column {}: {e}", &headers[k])))?;
            if !v.is_finite() {
                return Err(Error::Dataset(format!("line {line}, column {}: non-finite value", &headers[k])));
            }
            Ok(v)
        };
        let x = (1..=dim).map(parse).collect::<Result<Vec<_>>>()?;
        let y = parse(width - 1)?;
        let task = *index.entry(label.clone()).or_insert_with(|| {
            labels.push(label);
            pools.push(Vec::new());
            means.push(Vec::new());
            pools.len() - 1
        });
        pools[task].push(x);
        means[task].push(y);
    }
    if pools.is_empty() {
        return Err(Error::Dataset("dataset has no rows".into()));
    }
    if options.standardize {
        for (task, m) in means.iter_mut().enumerate() {
            let n = m.len() as f64;
            let mean = m.iter().sum::<f64>() / n;
            let var = m.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            if var <= 0.0 {
                return Err(Error::Dataset(format!(
                    "task {:?} has constant rewards and cannot be standardized",
                    labels[task]
                )));
            }
            let sd = var.sqrt();
            for v in m.iter_mut() {
                *v = (*v - mean) / sd;
            }
        }
    }
    let pools = pools.into_iter().map(Arc::new).collect();
    let env = Environment::assemble(TaskModel::Tabular, labels, dim, pools, means, 1.0);
    env.with_noise_sigma(options.noise_sigma)
}

pub fn load_dataset(path: &Path, options: DatasetOptions) -> Result<Environment> {
    let file = std::fs::File::open(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    read_dataset(std::io::BufReader::new(file), options)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec(dev: f64) -> SyntheticSpec {
        SyntheticSpec { pool_size: 200, ..SyntheticSpec::new(3, 4, dev) }
    }

    #[test]
    fn synthetic_pool_on_sphere_and_norms_bounded() {
        for seed in 0..20 {
            let env = generate_synthetic(&small_spec(0.6), seed).unwrap();
            for x in env.pool(0) {
                assert!((dot(x, x).sqrt() - 10.0).abs() < 1e-9);
            }
            for w in env.task_weights().unwrap() {
                assert!(dot(w, w).sqrt() <= 1.0 + 1e-12);
            }
            let eps = env.true_epsilon(1.0).unwrap();
            assert!((0.0..=2.0).contains(&eps));
        }
    }

    #[test]
    fn dev_delta_extremes() {
        let env = generate_synthetic(&small_spec(0.0), 3).unwrap();
        let w = env.task_weights().unwrap();
        assert!(w.iter().all(|v| v == &w[0]));
        assert_eq!(env.true_epsilon(1.0).unwrap(), 0.0);
        let env = generate_synthetic(&small_spec(1.0), 3).unwrap();
        for v in env.task_weights().unwrap() {
            assert!((dot(v, v) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn opposite_tasks_have_unit_deviation() {
        let pool = Arc::new(vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        let weights = vec![vec![1.0, 0.0], vec![-1.0, 0.0]];
        let means = weights.iter().map(|w| pool.iter().map(|x| dot(w, x)).collect()).collect();
        let env = Environment::assemble(
            TaskModel::Linear { weights },
            vec!["a".into(), "b".into()],
            2,
            vec![pool.clone(), pool],
            means,
            1.0,
        );
        assert!((env.true_epsilon(1.0).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn noise_free_feedback_and_regret() {
        let env = generate_synthetic(&small_spec(0.4), 1).unwrap().with_noise_sigma(0.0).unwrap();
        let mut rng = stream(1, Stream::Noise);
        let x = env.pool(2)[5].clone();
        assert_eq!(env.feedback(2, &x, &mut rng).unwrap(), env.mean_at(2, 5));
        assert_eq!(env.online_regret_increment(2, env.oracle_argmax(2)).unwrap(), 0.0);
        let worst = env.means(2).iter().cloned().fold(f64::INFINITY, f64::min);
        let wk = env.means(2).iter().position(|&v| v == worst).unwrap();
        assert_eq!(env.online_regret_increment(2, wk).unwrap(), env.oracle_best(2) - worst);
        let best: Vec<usize> = (0..4).map(|i| env.oracle_argmax(i)).collect();
        assert_eq!(env.al_regret_increment(&best).unwrap(), 0.0);
    }

    #[test]
    fn noise_mean_converges() {
        let env = generate_synthetic(&small_spec(0.4), 2).unwrap();
        let mut rng = stream(9, Stream::Noise);
        let n = 100_000;
        let s: f64 = (0..n).map(|_| env.feedback_at(1, 3, &mut rng).unwrap()).sum();
        assert!((s / n as f64 - env.mean_at(1, 3)).abs() < 4.0 / (n as f64).sqrt());
    }

    #[test]
    fn dataset_round_trip_and_standardize() {
        let text = "task,x_1,x_2,reward\nA,0,1,2.0\nA,1,0,5.0\nB,1,1,-1\nA,2,2,3.5\nB,0,0,4\nB,3,1,0.5\n";
        let env = read_dataset(text.as_bytes(), DatasetOptions::default()).unwrap();
        assert_eq!(env.labels(), &["A".to_string(), "B".to_string()]);
        assert_eq!(env.pool(0).len(), 3);
        assert_eq!(env.oracle_best(0), 5.0);
        assert_eq!(env.oracle_best(1), 4.0);
        let mut buf = Vec::new();
        env.write_dataset(&mut buf).unwrap();
        let again = read_dataset(buf.as_slice(), DatasetOptions::default()).unwrap();
        assert_eq!(again, env);
        assert!(matches!(env.true_epsilon(1.0), Err(Error::UnsupportedEnvironment(_))));
        assert!(matches!(env.true_mean(0, &[9.0, 9.0]), Err(Error::UnknownPoint(0))));

        let std = read_dataset(text.as_bytes(), DatasetOptions { standardize: true, noise_sigma: 0.0 }).unwrap();
        for i in 0..2 {
            let m = std.means(i);
            let mean = m.iter().sum::<f64>() / 3.0;
            let var = m.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 3.0;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn dataset_errors() {
        let bad_dim = "task,x_1,x_2,reward\nA,0,1\n";
        assert!(read_dataset(bad_dim.as_bytes(), DatasetOptions::default()).is_err());
        let bad_num = "task,x_1,reward\nA,zz,1\n";
        assert!(matches!(read_dataset(bad_num.as_bytes(), DatasetOptions::default()), Err(Error::Dataset(_))));
        let bad_header = "label,x_1,reward\nA,0,1\n";
        assert!(read_dataset(bad_header.as_bytes(), DatasetOptions::default()).is_err());
        let empty_label = "task,x_1,reward\n,0,1\n";
        assert!(read_dataset(empty_label.as_bytes(), DatasetOptions::default()).is_err());
    }
}
