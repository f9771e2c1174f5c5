//! Experiment configuration files.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use multitask_ucb::envs::SyntheticSpec;

use crate::error::CliError;

/// Environment variable that overrides `output_dir`.
pub const OUTPUT_DIR_ENV: &str = "MTUCB_OUTPUT_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Online,
    Active,
    WidthsBench,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Online => "online",
            Mode::Active => "active",
            Mode::WidthsBench => "widths-bench",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Optional in the file; the subcommand decides and a mismatch is an error.
    #[serde(default)]
    pub mode: Option<Mode>,
    #[serde(default = "default_horizon")]
    pub horizon: usize,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub plot: bool,
    #[serde(default)]
    pub jobs: Option<usize>,
    /// Candidate values of `b`; when non-empty the best one for the first
    /// b-dependent improved policy is used for every policy.
    #[serde(default)]
    pub sweep_b: Vec<f64>,
    #[serde(default)]
    pub env: Option<EnvConfig>,
    #[serde(default)]
    pub learner: LearnerConfig,
    #[serde(default, rename = "policy")]
    pub policies: Vec<PolicyConfig>,
    #[serde(default)]
    pub widths: WidthsConfig,
}

fn default_horizon() -> usize {
    300
}

fn default_seeds() -> Vec<u64> {
    (0..5).collect()
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("results")
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum EnvConfig {
    Synthetic(SyntheticSpec),
    Dataset(DatasetConfig),
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub path: PathBuf,
    #[serde(default)]
    pub standardize: bool,
    #[serde(default = "one")]
    pub noise_sigma: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum KernelChoice {
    /// Linear kernel scaled so that `k(x, x) ≤ 1` on the pools.
    #[default]
    Linear,
    SquaredExponential,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearnerConfig {
    /// Lower bound on `B`; synthetic linear runs raise it to the true norm.
    #[serde(default = "one")]
    pub bound_b: f64,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default = "one")]
    pub b: f64,
    /// Task deviation; computed exactly for synthetic linear runs if absent.
    #[serde(default)]
    pub eps: Option<f64>,
    #[serde(default)]
    pub kernel: KernelChoice,
    #[serde(default = "one")]
    pub lengthscale: f64,
}

fn default_delta() -> f64 {
    0.1
}

impl Default for LearnerConfig {
    fn default() -> Self {
        Self {
            bound_b: 1.0,
            delta: default_delta(),
            b: 1.0,
            eps: None,
            kernel: KernelChoice::Linear,
            lengthscale: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyKind {
    Independent,
    Pooled,
    MtUcb,
    AdamtUcb,
    MtAl,
    Uniform,
    AeLsvi,
}

impl PolicyKind {
    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::Independent => "independent",
            PolicyKind::Pooled => "pooled",
            PolicyKind::MtUcb => "mt-ucb",
            PolicyKind::AdamtUcb => "adamt-ucb",
            PolicyKind::MtAl => "mt-al",
            PolicyKind::Uniform => "uniform",
            PolicyKind::AeLsvi => "ae-lsvi",
        }
    }

    pub fn mode(self) -> Mode {
        match self {
            PolicyKind::Independent | PolicyKind::Pooled | PolicyKind::MtUcb | PolicyKind::AdamtUcb => Mode::Online,
            PolicyKind::MtAl | PolicyKind::Uniform | PolicyKind::AeLsvi => Mode::Active,
        }
    }

    fn has_width(self) -> bool {
        matches!(self, PolicyKind::MtUcb | PolicyKind::MtAl | PolicyKind::Uniform | PolicyKind::AeLsvi)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum WidthChoice {
    #[default]
    Improved,
    Naive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum BMode {
    /// Every grid learner uses the experiment's `b` with the matched ridge.
    #[default]
    Shared,
    /// Each grid learner picks `(b, λ)` from the horizon and its deviation.
    PerDeviation,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyConfig {
    pub kind: PolicyKind,
    #[serde(default)]
    pub label: Option<String>,
    #[serde(default)]
    pub width: Option<WidthChoice>,
    #[serde(default)]
    pub grid: Option<Vec<f64>>,
    #[serde(default)]
    pub b_mode: Option<BMode>,
    #[serde(default)]
    pub c: Option<f64>,
}

impl PolicyConfig {
    pub fn new(kind: PolicyKind) -> Self {
        Self { kind, label: None, width: None, grid: None, b_mode: None, c: None }
    }

    pub fn width(&self) -> WidthChoice {
        self.width.unwrap_or_default()
    }

    pub fn grid(&self) -> Vec<f64> {
        self.grid.clone().unwrap_or_else(|| (1..=10).map(|k| k as f64 / 10.0).collect())
    }

    pub fn b_mode(&self) -> BMode {
        self.b_mode.unwrap_or_default()
    }

    pub fn c(&self) -> f64 {
        self.c.unwrap_or(1.0)
    }

    /// Whether the policy's behaviour depends on the experiment's `b`.
    pub fn uses_b(&self) -> bool {
        match self.kind {
            PolicyKind::Independent | PolicyKind::Pooled => false,
            PolicyKind::AdamtUcb => self.b_mode() == BMode::Shared,
            _ => true,
        }
    }

    pub fn label(&self) -> String {
        if let Some(l) = &self.label {
            return l.clone();
        }
        if self.kind.has_width() {
            let w = match self.width() {
                WidthChoice::Improved => "improved",
                WidthChoice::Naive => "naive",
            };
            format!("{}-{w}", self.kind.name())
        } else {
            self.kind.name().to_string()
        }
    }
}

/// Parameters of the width-vs-b sweep.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WidthsConfig {
    #[serde(default = "one")]
    pub bound_b: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
    #[serde(default = "default_n")]
    pub n_tasks: usize,
    #[serde(default = "default_t")]
    pub t: usize,
    #[serde(default = "one")]
    pub delta: f64,
    #[serde(default)]
    pub gamma_mt: f64,
    #[serde(default)]
    pub gamma_st: f64,
    #[serde(default = "default_b_min")]
    pub b_min: f64,
    #[serde(default = "default_b_max")]
    pub b_max: f64,
    #[serde(default = "default_points")]
    pub points: usize,
}

fn default_eps() -> f64 {
    0.4
}
fn default_n() -> usize {
    20
}
fn default_t() -> usize {
    4
}
fn default_b_min() -> f64 {
    1e-3
}
fn default_b_max() -> f64 {
    1e4
}
fn default_points() -> usize {
    200
}

impl Default for WidthsConfig {
    fn default() -> Self {
        Self {
            bound_b: 1.0,
            eps: default_eps(),
            n_tasks: default_n(),
            t: default_t(),
            delta: 1.0,
            gamma_mt: 0.0,
            gamma_st: 0.0,
            b_min: default_b_min(),
            b_max: default_b_max(),
            points: default_points(),
        }
    }
}

impl WidthsConfig {
    /// Log-spaced grid from `b_min` to `b_max`.
    pub fn grid(&self) -> Vec<f64> {
        if self.points == 1 {
            return vec![self.b_min];
        }
        let (lo, hi) = (self.b_min.ln(), self.b_max.ln());
        (0..self.points)
            .map(|k| (lo + (hi - lo) * k as f64 / (self.points - 1) as f64).exp())
            .collect()
    }
}

fn config_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

impl ExperimentConfig {
    /// Configuration with no environment or policies, used by `widths-bench`
    /// when no file is given.
    pub fn empty(mode: Mode) -> Self {
        Self {
            mode: Some(mode),
            horizon: default_horizon(),
            seeds: default_seeds(),
            output_dir: default_output_dir(),
            plot: false,
            jobs: None,
            sweep_b: Vec::new(),
            env: None,
            learner: LearnerConfig::default(),
            policies: Vec::new(),
            widths: WidthsConfig::default(),
        }
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| config_err(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| config_err(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
        // relative dataset paths are resolved against the config file
        if let Some(EnvConfig::Dataset(d)) = &mut cfg.env {
            if d.path.is_relative() {
                if let Some(dir) = path.parent() {
                    d.path = dir.join(&d.path);
                }
            }
        }
        Ok(cfg)
    }

    /// Applies the environment-variable override of `output_dir`.
    pub fn apply_env_override(&mut self) {
        if let Some(dir) = std::env::var_os(OUTPUT_DIR_ENV) {
            if !dir.is_empty() {
                self.output_dir = PathBuf::from(dir);
            }
        }
    }

    /// Fixes the mode from the subcommand.
    pub fn resolve_mode(&mut self, mode: Mode) -> Result<(), CliError> {
        match self.mode {
            Some(m) if m != mode => Err(config_err(format!(
                "config declares mode \"{}\" but the \"{}\" subcommand was used",
                m.name(),
                mode.name()
            ))),
            _ => {
                self.mode = Some(mode);
                Ok(())
            }
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode.unwrap_or(Mode::Online)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let mode = self.mode.ok_or_else(|| config_err("mode is not set"))?;
        if self.jobs == Some(0) {
            return Err(config_err("jobs must be at least 1"));
        }
        if mode == Mode::WidthsBench {
            return self.validate_widths();
        }
        if self.horizon == 0 {
            return Err(config_err("horizon must be at least 1"));
        }
        if self.seeds.is_empty() {
            return Err(config_err("at least one seed is required"));
        }
        let mut seen = HashSet::new();
        if !self.seeds.iter().all(|s| seen.insert(*s)) {
            return Err(config_err("seeds must be distinct"));
        }
        let env = self.env.as_ref().ok_or_else(|| config_err("an [env] section is required"))?;
        match env {
            EnvConfig::Synthetic(spec) => spec.validate().map_err(|e| config_err(format!("[env]: {e}")))?,
            EnvConfig::Dataset(d) => {
                if !(d.noise_sigma >= 0.0 && d.noise_sigma.is_finite()) {
                    return Err(config_err("[env] noise_sigma must be nonnegative"));
                }
                if self.learner.eps.is_none() {
                    return Err(config_err("[learner] eps is required for dataset environments"));
                }
            }
        }
        self.validate_learner()?;
        if self.policies.is_empty() {
            return Err(config_err("at least one [[policy]] is required"));
        }
        let mut labels = HashSet::new();
        for p in &self.policies {
            self.validate_policy(p, mode)?;
            if !labels.insert(p.label()) {
                return Err(config_err(format!("duplicate policy label \"{}\"", p.label())));
            }
        }
        for &b in &self.sweep_b {
            if !(b >= 0.0 && b.is_finite()) {
                return Err(config_err(format!("sweep_b values must be finite and >= 0, got {b}")));
            }
        }
        if !self.sweep_b.is_empty() && !self.policies.iter().any(|p| p.uses_b()) {
            return Err(config_err("sweep_b given but no policy depends on b"));
        }
        Ok(())
    }

    fn validate_learner(&self) -> Result<(), CliError> {
        let l = &self.learner;
        if !(l.bound_b > 0.0 && l.bound_b.is_finite()) {
            return Err(config_err("[learner] bound_b must be positive"));
        }
        if !(l.delta > 0.0 && l.delta <= 1.0) {
            return Err(config_err("[learner] delta must lie in (0, 1]"));
        }
        if !(l.b >= 0.0 && l.b.is_finite()) {
            return Err(config_err("[learner] b must be finite and >= 0"));
        }
        if let Some(e) = l.eps {
            if !(0.0..=2.0).contains(&e) {
                return Err(config_err("[learner] eps must lie in [0, 2]"));
            }
        }
        if l.kernel == KernelChoice::SquaredExponential {
            if !(l.lengthscale > 0.0 && l.lengthscale.is_finite()) {
                return Err(config_err("[learner] lengthscale must be positive"));
            }
            if l.eps.is_none() {
                return Err(config_err("[learner] eps is required with the squared-exponential kernel"));
            }
        }
        Ok(())
    }

    fn validate_policy(&self, p: &PolicyConfig, mode: Mode) -> Result<(), CliError> {
        let name = p.label();
        if p.kind.mode() != mode {
            return Err(config_err(format!(
                "policy \"{name}\" is a {} policy but the experiment mode is {}",
                p.kind.mode().name(),
                mode.name()
            )));
        }
        if p.width.is_some() && !p.kind.has_width() {
            return Err(config_err(format!("policy \"{name}\" does not take a width")));
        }
        let ada = p.kind == PolicyKind::AdamtUcb;
        if !ada && (p.grid.is_some() || p.b_mode.is_some() || p.c.is_some()) {
            return Err(config_err(format!("grid, b_mode and c only apply to adamt-ucb (policy \"{name}\")")));
        }
        if ada {
            let grid = p.grid();
            if grid.is_empty() || grid.windows(2).any(|w| w[1] <= w[0]) || grid.iter().any(|e| !(*e > 0.0 && *e <= 2.0)) {
                return Err(config_err(format!("policy \"{name}\": grid must be strictly increasing within (0, 2]")));
            }
            if !(p.c() > 0.0 && p.c().is_finite()) {
                return Err(config_err(format!("policy \"{name}\": c must be positive")));
            }
        }
        Ok(())
    }

    fn validate_widths(&self) -> Result<(), CliError> {
        let w = &self.widths;
        if !(w.bound_b > 0.0 && (0.0..=2.0).contains(&w.eps) && w.delta > 0.0 && w.delta <= 1.0) {
            return Err(config_err("[widths] requires bound_b > 0, eps in [0, 2] and delta in (0, 1]"));
        }
        if w.n_tasks == 0 || w.t == 0 || w.points == 0 {
            return Err(config_err("[widths] n_tasks, t and points must be at least 1"));
        }
        if !(w.gamma_mt >= 0.0 && w.gamma_st >= 0.0) {
            return Err(config_err("[widths] information gains must be nonnegative"));
        }
        if !(w.b_min > 0.0 && w.b_max >= w.b_min && w.b_max.is_finite()) {
            return Err(config_err("[widths] requires 0 < b_min <= b_max < inf"));
        }
        Ok(())
    }
}

/// Parses `"0,1,2"` or ranges such as `"0-4"` (inclusive) and mixtures.
pub fn parse_seeds(text: &str) -> Result<Vec<u64>, CliError> {
    let mut out = Vec::new();
    for part in text.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let bad = || config_err(format!("invalid seed list entry \"{part}\""));
        if let Some((a, b)) = part.split_once('-') {
            let a: u64 = a.trim().parse().map_err(|_| bad())?;
            let b: u64 = b.trim().parse().map_err(|_| bad())?;
            if b < a {
                return Err(bad());
            }
            out.extend(a..=b);
        } else {
            out.push(part.parse().map_err(|_| bad())?);
        }
    }
    if out.is_empty() {
        return Err(config_err("empty seed list"));
    }
    Ok(out)
}

/// Parses a comma-separated list of `b` values.
pub fn parse_b_list(text: &str) -> Result<Vec<f64>, CliError> {
    text.split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(|p| p.parse::<f64>().map_err(|_| config_err(format!("invalid b value \"{p}\""))))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const ONLINE: &str = r#"
horizon = 20
seeds = [0, 1]

[env]
kind = "synthetic"
dim = 3
n_tasks = 2
dev_delta = 0.3
pool_size = 50

[learner]
b = 0.5

[[policy]]
kind = "independent"

[[policy]]
kind = "mt-ucb"
width = "naive"

[[policy]]
kind = "adamt-ucb"
grid = [0.2, 0.6, 1.0]
"#;

    #[test]
    fn parses_online_config() {
        let mut cfg = ExperimentConfig::parse(ONLINE).unwrap();
        cfg.resolve_mode(Mode::Online).unwrap();
        cfg.validate().unwrap();
        let labels: Vec<String> = cfg.policies.iter().map(|p| p.label()).collect();
        assert_eq!(labels, ["independent", "mt-ucb-naive", "adamt-ucb"]);
        match cfg.env.unwrap() {
            EnvConfig::Synthetic(s) => {
                assert_eq!(s.pool_size, 50);
                assert_eq!(s.sphere_radius, 10.0);
            }
            other => panic!("unexpected env {other:?}"),
        }
    }

    #[test]
    fn active_policy_in_online_mode_is_rejected() {
        let text = format!("{ONLINE}\n[[policy]]\nkind = \"mt-al\"\n");
        let mut cfg = ExperimentConfig::parse(&text).unwrap();
        cfg.resolve_mode(Mode::Online).unwrap();
        assert!(matches!(cfg.validate(), Err(CliError::Config(_))));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(ExperimentConfig::parse("horizon = 3\nhorizn = 4\n").is_err());
        let text = ONLINE.replace("pool_size = 50", "pool_size = 50\nradius = 3");
        assert!(ExperimentConfig::parse(&text).is_err());
    }

    #[test]
    fn mode_mismatch_is_rejected() {
        let mut cfg = ExperimentConfig::parse(&format!("mode = \"active\"\n{ONLINE}")).unwrap();
        assert!(cfg.resolve_mode(Mode::Online).is_err());
    }

    #[test]
    fn duplicate_labels_are_rejected() {
        let text = format!("{ONLINE}\n[[policy]]\nkind = \"independent\"\n");
        let mut cfg = ExperimentConfig::parse(&text).unwrap();
        cfg.resolve_mode(Mode::Online).unwrap();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn seed_lists() {
        assert_eq!(parse_seeds("0-3,7").unwrap(), vec![0, 1, 2, 3, 7]);
        assert_eq!(parse_seeds(" 5 ").unwrap(), vec![5]);
        assert!(parse_seeds("3-1").is_err());
        assert!(parse_seeds("a").is_err());
        assert!(parse_seeds("").is_err());
    }

    #[test]
    fn widths_grid_is_log_spaced() {
        let w = WidthsConfig { b_min: 0.01, b_max: 100.0, points: 5, ..WidthsConfig::default() };
        let g = w.grid();
        assert_eq!(g.len(), 5);
        for (v, e) in g.iter().zip([0.01, 0.1, 1.0, 10.0, 100.0]) {
            assert!((v / e - 1.0).abs() < 1e-12);
        }
    }
}
