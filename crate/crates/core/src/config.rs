//! Scenario configuration files.
//!
//! Scenarios are TOML documents. Top-level keys describe the cluster and the
//! training run, `[[strategies]]` lists the strategies to compare,
//! `[[disturbances]]` attaches slowdowns to workers and an optional
//! `[sgd_check]` table configures the SGD-lab verifications:
//!
//! ```toml
//! name = "example"
//! n_workers = 2
//! worker_costs = [0.001, 0.002]      # seconds per sample
//! dataset_size = 10000
//! total_budget = 64
//! n_epochs = 10
//! seed = 7
//!
//! [[strategies]]
//! kind = "fixed_ssgd"
//!
//! [[strategies]]
//! kind = "dbs"
//!
//! [[disturbances]]
//! worker = 0
//! start_epoch = 5
//! extra_epoch_seconds = 10.0
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sgd::Aggregation;
use crate::sim::{
    DisturbanceEvent, StrategyConfig, StrategyKind, WorkerProfile, DEFAULT_SYNC_COST_PER_ROUND,
    DEFAULT_SYNC_COST_PER_WORKER,
};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("{path}:{line}:{column}: {message}")]
    Parse { path: PathBuf, line: usize, column: usize, message: String },
    #[error("invalid `{field}`: {message}")]
    Validation { field: String, message: String },
}

pub type Result<T> = std::result::Result<T, ConfigError>;

fn invalid(field: impl Into<String>, message: impl Into<String>) -> ConfigError {
    ConfigError::Validation { field: field.into(), message: message.into() }
}

fn default_sync_interval() -> u64 {
    1
}

fn default_per_round() -> f64 {
    DEFAULT_SYNC_COST_PER_ROUND
}

fn default_per_worker() -> f64 {
    DEFAULT_SYNC_COST_PER_WORKER
}

fn is_default<T: Default + PartialEq>(v: &T) -> bool {
    *v == T::default()
}

/// A strategy entry; the scenario supplies the batch budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StrategyEntry {
    pub kind: StrategyKind,
    #[serde(default = "default_sync_interval")]
    pub sync_interval: u64,
    #[serde(default = "default_per_round")]
    pub sync_cost_per_round: f64,
    #[serde(default = "default_per_worker")]
    pub sync_cost_per_worker: f64,
    #[serde(default, skip_serializing_if = "is_default")]
    pub sync_at_epoch_end: bool,
    #[serde(default, skip_serializing_if = "is_default")]
    pub perf_smoothing: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

impl StrategyEntry {
    pub fn new(kind: StrategyKind) -> Self {
        Self {
            kind,
            sync_interval: 1,
            sync_cost_per_round: DEFAULT_SYNC_COST_PER_ROUND,
            sync_cost_per_worker: DEFAULT_SYNC_COST_PER_WORKER,
            sync_at_epoch_end: false,
            perf_smoothing: 0.0,
            label: None,
        }
    }

    pub fn with_interval(mut self, step: u64) -> Self {
        self.sync_interval = step;
        self
    }

    pub fn to_strategy(&self, total_budget: u64) -> StrategyConfig {
        StrategyConfig {
            kind: self.kind,
            sync_interval: self.sync_interval,
            total_budget,
            sync_cost_per_round: self.sync_cost_per_round,
            sync_cost_per_worker: self.sync_cost_per_worker,
            sync_at_epoch_end: self.sync_at_epoch_end,
            perf_smoothing: self.perf_smoothing,
            label: self.label.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkerDisturbance {
    pub worker: usize,
    #[serde(flatten)]
    pub event: DisturbanceEvent,
}

fn default_mu() -> f64 {
    1.0
}
fn default_noise() -> f64 {
    1.0
}
fn default_initial_value() -> f64 {
    1.0
}
fn default_aggregation() -> Aggregation {
    Aggregation::BatchWeighted
}
fn default_bound_seeds() -> usize {
    1000
}
fn default_m_values() -> Vec<usize> {
    vec![1, 4, 16, 64]
}
fn default_variance_draws() -> usize {
    100_000
}
fn default_ratio_tolerance() -> f64 {
    0.1
}
fn default_equivalence_seeds() -> usize {
    100
}
fn default_relative_tolerance() -> f64 {
    0.02
}

/// Schedule-equivalence run: fixed even batches against the plans the
/// scenario's dbs strategy produces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EquivalenceConfig {
    pub dimension: usize,
    pub step_size: f64,
    #[serde(default)]
    pub momentum: f64,
    pub n_iterations: usize,
    #[serde(default = "default_equivalence_seeds")]
    pub seeds: usize,
    #[serde(default = "default_relative_tolerance")]
    pub relative_tolerance: f64,
}

/// SGD-lab verifications on the centered quadratic family whose sample count
/// is the scenario's `dataset_size`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SgdCheckConfig {
    pub dimension: usize,
    #[serde(default = "default_mu")]
    pub mu: f64,
    #[serde(default = "default_noise")]
    pub sample_noise_scale: f64,
    #[serde(default)]
    pub problem_seed: u64,
    /// Every coordinate of the starting point.
    #[serde(default = "default_initial_value")]
    pub initial_value: f64,
    /// Step sizes for the convergence-bound check, each in `(0, 1/mu)`.
    pub step_sizes: Vec<f64>,
    #[serde(default)]
    pub momentum: f64,
    pub n_iterations: usize,
    #[serde(default = "default_aggregation")]
    pub aggregation: Aggregation,
    #[serde(default = "default_bound_seeds")]
    pub seeds: usize,
    #[serde(default = "default_m_values")]
    pub m_values: Vec<usize>,
    #[serde(default = "default_variance_draws")]
    pub variance_draws: usize,
    #[serde(default = "default_ratio_tolerance")]
    pub ratio_tolerance: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub equivalence: Option<EquivalenceConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub description: String,
    pub n_workers: usize,
    /// Seconds per sample, one per worker.
    pub worker_costs: Vec<f64>,
    /// Seconds per iteration, one per worker; empty means zero.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub per_iteration_overhead: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub disturbances: Vec<WorkerDisturbance>,
    pub dataset_size: u64,
    pub total_budget: u64,
    pub n_epochs: usize,
    pub strategies: Vec<StrategyEntry>,
    #[serde(default)]
    pub seed: u64,
    /// Log-scale of the per-epoch multiplicative cost jitter; 0 disables it.
    #[serde(default, skip_serializing_if = "is_default")]
    pub timing_jitter: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sgd_check: Option<SgdCheckConfig>,
}

fn positive(field: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(invalid(field, format!("must be > 0, got {v}")))
    }
}

fn non_negative(field: &str, v: f64) -> Result<()> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(invalid(field, format!("must be >= 0, got {v}")))
    }
}

fn step_in_range(field: &str, gamma: f64, mu: f64) -> Result<()> {
    if gamma.is_finite() && gamma > 0.0 && gamma * mu < 1.0 {
        Ok(())
    } else {
        Err(invalid(field, format!("step size {gamma} must lie in (0, 1/mu) = (0, {})", 1.0 / mu)))
    }
}

fn momentum_in_range(field: &str, beta: f64) -> Result<()> {
    if (0.0..1.0).contains(&beta) {
        Ok(())
    } else {
        Err(invalid(field, format!("must be in [0, 1), got {beta}")))
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        if self.name.trim().is_empty() {
            return Err(invalid("name", "must not be empty"));
        }
        if self.name.contains(['/', '\\']) {
            return Err(invalid("name", "must not contain path separators"));
        }
        if self.n_workers == 0 {
            return Err(invalid("n_workers", "must be >= 1"));
        }
        if self.worker_costs.len() != self.n_workers {
            return Err(invalid(
                "worker_costs",
                format!("has {} entries for {} workers", self.worker_costs.len(), self.n_workers),
            ));
        }
        for (i, &c) in self.worker_costs.iter().enumerate() {
            positive(&format!("worker_costs[{i}]"), c)?;
        }
        if !self.per_iteration_overhead.is_empty() && self.per_iteration_overhead.len() != self.n_workers {
            return Err(invalid(
                "per_iteration_overhead",
                format!("has {} entries for {} workers", self.per_iteration_overhead.len(), self.n_workers),
            ));
        }
        for (i, &o) in self.per_iteration_overhead.iter().enumerate() {
            non_negative(&format!("per_iteration_overhead[{i}]"), o)?;
        }
        for (k, d) in self.disturbances.iter().enumerate() {
            if d.worker >= self.n_workers {
                return Err(invalid(
                    format!("disturbances[{k}].worker"),
                    format!("worker {} does not exist (n_workers = {})", d.worker, self.n_workers),
                ));
            }
            d.event.validate().map_err(|m| invalid(format!("disturbances[{k}]"), m))?;
        }
        if self.n_epochs == 0 {
            return Err(invalid("n_epochs", "must be >= 1"));
        }
        if self.total_budget < self.n_workers as u64 {
            return Err(invalid(
                "total_budget",
                format!("{} is smaller than n_workers = {}", self.total_budget, self.n_workers),
            ));
        }
        if self.dataset_size < self.total_budget {
            return Err(invalid(
                "dataset_size",
                format!("{} is smaller than total_budget = {}", self.dataset_size, self.total_budget),
            ));
        }
        non_negative("timing_jitter", self.timing_jitter)?;
        if self.strategies.is_empty() {
            return Err(invalid("strategies", "at least one strategy is required"));
        }
        let mut names = std::collections::BTreeSet::new();
        for (k, s) in self.strategies.iter().enumerate() {
            let path = format!("strategies[{k}]");
            if s.sync_interval < 1 {
                return Err(invalid(format!("{path}.sync_interval"), "must be >= 1"));
            }
            non_negative(&format!("{path}.sync_cost_per_round"), s.sync_cost_per_round)?;
            non_negative(&format!("{path}.sync_cost_per_worker"), s.sync_cost_per_worker)?;
            if !(0.0..1.0).contains(&s.perf_smoothing) {
                return Err(invalid(format!("{path}.perf_smoothing"), "must be in [0, 1)"));
            }
            let name = s.to_strategy(self.total_budget).name();
            if !names.insert(name.clone()) {
                return Err(invalid(path, format!("duplicate strategy name `{name}`; set a distinct label")));
            }
        }
        // Overlap and ordering of events on the same worker.
        for p in self.profiles() {
            p.validate().map_err(|e| invalid("disturbances", e.to_string()))?;
        }
        if let Some(sgd) = &self.sgd_check {
            self.validate_sgd(sgd)?;
        }
        Ok(())
    }

    fn validate_sgd(&self, c: &SgdCheckConfig) -> Result<()> {
        if c.dimension == 0 {
            return Err(invalid("sgd_check.dimension", "must be >= 1"));
        }
        positive("sgd_check.mu", c.mu)?;
        non_negative("sgd_check.sample_noise_scale", c.sample_noise_scale)?;
        if !c.initial_value.is_finite() {
            return Err(invalid("sgd_check.initial_value", "must be finite"));
        }
        if c.step_sizes.is_empty() {
            return Err(invalid("sgd_check.step_sizes", "at least one step size is required"));
        }
        for (k, &g) in c.step_sizes.iter().enumerate() {
            step_in_range(&format!("sgd_check.step_sizes[{k}]"), g, c.mu)?;
        }
        momentum_in_range("sgd_check.momentum", c.momentum)?;
        if c.n_iterations == 0 {
            return Err(invalid("sgd_check.n_iterations", "must be >= 1"));
        }
        if c.seeds < 2 {
            return Err(invalid("sgd_check.seeds", "must be >= 2"));
        }
        if c.m_values.is_empty() || c.m_values.contains(&0) {
            return Err(invalid("sgd_check.m_values", "must be a non-empty list of positive batch sizes"));
        }
        if c.variance_draws < 2 {
            return Err(invalid("sgd_check.variance_draws", "must be >= 2"));
        }
        positive("sgd_check.ratio_tolerance", c.ratio_tolerance)?;
        if let Some(e) = &c.equivalence {
            if e.dimension == 0 {
                return Err(invalid("sgd_check.equivalence.dimension", "must be >= 1"));
            }
            step_in_range("sgd_check.equivalence.step_size", e.step_size, c.mu)?;
            momentum_in_range("sgd_check.equivalence.momentum", e.momentum)?;
            if e.n_iterations == 0 {
                return Err(invalid("sgd_check.equivalence.n_iterations", "must be >= 1"));
            }
            if e.seeds < 2 {
                return Err(invalid("sgd_check.equivalence.seeds", "must be >= 2"));
            }
            positive("sgd_check.equivalence.relative_tolerance", e.relative_tolerance)?;
            if !self.strategies.iter().any(|s| s.kind == StrategyKind::Dbs) {
                return Err(invalid("sgd_check.equivalence", "requires a dbs strategy to produce plans"));
            }
        }
        Ok(())
    }

    /// Worker profiles with overheads and disturbances attached.
    pub fn profiles(&self) -> Vec<WorkerProfile> {
        let mut profiles: Vec<WorkerProfile> = self
            .worker_costs
            .iter()
            .enumerate()
            .map(|(i, &c)| {
                let overhead = self.per_iteration_overhead.get(i).copied().unwrap_or(0.0);
                WorkerProfile::new(i, c).with_overhead(overhead)
            })
            .collect();
        for d in &self.disturbances {
            if let Some(p) = profiles.get_mut(d.worker) {
                p.disturbances.push(d.event);
            }
        }
        for p in &mut profiles {
            p.disturbances.sort_by_key(|e| e.start_epoch);
        }
        profiles
    }

    pub fn strategy_configs(&self) -> Vec<StrategyConfig> {
        self.strategies.iter().map(|s| s.to_strategy(self.total_budget)).collect()
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario configs always serialize")
    }
}

/// Parses and validates a scenario from TOML text; `path` only labels errors.
pub fn parse_config(text: &str, path: &Path) -> Result<ScenarioConfig> {
    let config: ScenarioConfig = toml::from_str(text).map_err(|e| {
        let (line, column) = e.span().map_or((0, 0), |span| line_column(text, span.start));
        ConfigError::Parse { path: path.to_path_buf(), line, column, message: e.message().to_string() }
    })?;
    config.validate()?;
    Ok(config)
}

pub fn load_config(path: &Path) -> Result<ScenarioConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ConfigError::Io { path: path.to_path_buf(), message: e.to_string() })?;
    parse_config(&text, path)
}

/// 1-based line and column of a byte offset.
fn line_column(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    (line, column)
}
