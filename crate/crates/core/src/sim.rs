//! Epoch-level timing simulation of synchronous data-parallel training.
//!
//! Every worker computes its share of the epoch with a linear cost model
//! (per-sample cost plus per-iteration overhead plus disturbances). Workers
//! that finish early wait for the slowest one; synchronization adds a cost per
//! AllReduce round. Per epoch this gives `t_gpu`, `t_w`, `t_s` and the wall
//! time `T_a = max(t_gpu) + t_s`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dbs::{self, DbsError, DbsScheduler, PartitionPlan};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("plan covers {plan} workers but {profiles} profiles were given")]
    LengthMismatch { plan: usize, profiles: usize },
    #[error("no epoch statistics to summarize")]
    EmptyStats,
    #[error(transparent)]
    Dbs(#[from] DbsError),
}

pub type Result<T> = std::result::Result<T, SimError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DisturbanceEffect {
    /// Flat seconds added to the worker's epoch compute time.
    ExtraSeconds(f64),
    /// Factor (>= 1) applied to the per-sample cost.
    CostMultiplier(f64),
}

/// Slowdown active on one worker for epochs `[start_epoch, end_epoch)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawDisturbance", into = "RawDisturbance")]
pub struct DisturbanceEvent {
    pub start_epoch: usize,
    /// `None` keeps the disturbance until training ends.
    pub end_epoch: Option<usize>,
    pub effect: DisturbanceEffect,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RawDisturbance {
    start_epoch: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    end_epoch: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    extra_epoch_seconds: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    cost_multiplier: Option<f64>,
}

impl TryFrom<RawDisturbance> for DisturbanceEvent {
    type Error = String;

    fn try_from(raw: RawDisturbance) -> std::result::Result<Self, String> {
        let effect = match (raw.extra_epoch_seconds, raw.cost_multiplier) {
            (Some(s), None) => DisturbanceEffect::ExtraSeconds(s),
            (None, Some(m)) => DisturbanceEffect::CostMultiplier(m),
            _ => return Err("exactly one of extra_epoch_seconds or cost_multiplier must be set".into()),
        };
        let event = DisturbanceEvent { start_epoch: raw.start_epoch, end_epoch: raw.end_epoch, effect };
        event.validate()?;
        Ok(event)
    }
}

impl From<DisturbanceEvent> for RawDisturbance {
    fn from(e: DisturbanceEvent) -> Self {
        let (extra_epoch_seconds, cost_multiplier) = match e.effect {
            DisturbanceEffect::ExtraSeconds(s) => (Some(s), None),
            DisturbanceEffect::CostMultiplier(m) => (None, Some(m)),
        };
        RawDisturbance { start_epoch: e.start_epoch, end_epoch: e.end_epoch, extra_epoch_seconds, cost_multiplier }
    }
}

impl DisturbanceEvent {
    pub fn extra_seconds(start_epoch: usize, seconds: f64) -> Self {
        Self { start_epoch, end_epoch: None, effect: DisturbanceEffect::ExtraSeconds(seconds) }
    }

    pub fn multiplier(start_epoch: usize, factor: f64) -> Self {
        Self { start_epoch, end_epoch: None, effect: DisturbanceEffect::CostMultiplier(factor) }
    }

    pub fn until(mut self, end_epoch: usize) -> Self {
        self.end_epoch = Some(end_epoch);
        self
    }

    pub fn is_active(&self, epoch: usize) -> bool {
        epoch >= self.start_epoch && self.end_epoch.is_none_or(|end| epoch < end)
    }

    pub fn validate(&self) -> std::result::Result<(), String> {
        if let Some(end) = self.end_epoch {
            if end <= self.start_epoch {
                return Err(format!("end_epoch {end} must be after start_epoch {}", self.start_epoch));
            }
        }
        match self.effect {
            DisturbanceEffect::ExtraSeconds(s) if !(s.is_finite() && s >= 0.0) => {
                Err(format!("extra_epoch_seconds must be >= 0, got {s}"))
            }
            DisturbanceEffect::CostMultiplier(m) if !(m.is_finite() && m >= 1.0) => {
                Err(format!("cost_multiplier must be >= 1, got {m}"))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkerProfile {
    pub worker_id: usize,
    /// Seconds per training sample.
    pub base_cost: f64,
    /// Seconds per iteration regardless of batch size.
    pub per_iteration_overhead: f64,
    pub disturbances: Vec<DisturbanceEvent>,
}

impl WorkerProfile {
    pub fn new(worker_id: usize, base_cost: f64) -> Self {
        Self { worker_id, base_cost, per_iteration_overhead: 0.0, disturbances: Vec::new() }
    }

    pub fn with_overhead(mut self, seconds: f64) -> Self {
        self.per_iteration_overhead = seconds;
        self
    }

    pub fn with_disturbance(mut self, event: DisturbanceEvent) -> Self {
        self.disturbances.push(event);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.base_cost.is_finite() && self.base_cost > 0.0) {
            return Err(SimError::Config(format!(
                "worker {}: base_cost must be > 0, got {}",
                self.worker_id, self.base_cost
            )));
        }
        if !(self.per_iteration_overhead.is_finite() && self.per_iteration_overhead >= 0.0) {
            return Err(SimError::Config(format!("worker {}: per_iteration_overhead must be >= 0", self.worker_id)));
        }
        for event in &self.disturbances {
            event.validate().map_err(|e| SimError::Config(format!("worker {}: {e}", self.worker_id)))?;
        }
        for pair in self.disturbances.windows(2) {
            if pair[1].start_epoch < pair[0].start_epoch {
                return Err(SimError::Config(format!(
                    "worker {}: disturbances must be sorted by start_epoch",
                    self.worker_id
                )));
            }
            match pair[0].end_epoch {
                Some(end) if end <= pair[1].start_epoch => {}
                _ => {
                    return Err(SimError::Config(format!(
                        "worker {}: disturbances overlap at epoch {}",
                        self.worker_id, pair[1].start_epoch
                    )))
                }
            }
        }
        Ok(())
    }

    /// Per-sample cost with active multiplicative disturbances applied.
    pub fn effective_cost(&self, epoch: usize) -> f64 {
        self.disturbances.iter().filter(|d| d.is_active(epoch)).fold(self.base_cost, |cost, d| match d.effect {
            DisturbanceEffect::CostMultiplier(m) => cost * m,
            DisturbanceEffect::ExtraSeconds(_) => cost,
        })
    }

    fn extra_seconds(&self, epoch: usize) -> f64 {
        self.disturbances
            .iter()
            .filter(|d| d.is_active(epoch))
            .map(|d| match d.effect {
                DisturbanceEffect::ExtraSeconds(s) => s,
                DisturbanceEffect::CostMultiplier(_) => 0.0,
            })
            .sum()
    }

    fn scaled(&self, factor: f64) -> Self {
        Self { base_cost: self.base_cost * factor, ..self.clone() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    FixedSsgd,
    ModelAveraging,
    OneShot,
    Dbs,
}

impl StrategyKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            StrategyKind::FixedSsgd => "fixed_ssgd",
            StrategyKind::ModelAveraging => "model_averaging",
            StrategyKind::OneShot => "one_shot",
            StrategyKind::Dbs => "dbs",
        }
    }
}

impl std::fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

pub const DEFAULT_SYNC_COST_PER_ROUND: f64 = 0.02;
pub const DEFAULT_SYNC_COST_PER_WORKER: f64 = 0.005;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyConfig {
    pub kind: StrategyKind,
    /// Iterations between synchronizations; only model averaging uses values
    /// other than 1.
    pub sync_interval: u64,
    pub total_budget: u64,
    pub sync_cost_per_round: f64,
    pub sync_cost_per_worker: f64,
    /// Model averaging: add a round at the end of the epoch when the interval
    /// does not divide the iteration count.
    pub sync_at_epoch_end: bool,
    /// Exponential smoothing of throughput estimates (dbs only, 0 = off).
    pub perf_smoothing: f64,
    /// Name used in reports; defaults to the strategy kind.
    pub label: Option<String>,
}

impl StrategyConfig {
    pub fn new(kind: StrategyKind, total_budget: u64) -> Self {
        Self {
            kind,
            sync_interval: 1,
            total_budget,
            sync_cost_per_round: DEFAULT_SYNC_COST_PER_ROUND,
            sync_cost_per_worker: DEFAULT_SYNC_COST_PER_WORKER,
            sync_at_epoch_end: false,
            perf_smoothing: 0.0,
            label: None,
        }
    }

    pub fn model_averaging(total_budget: u64, step: u64) -> Self {
        Self { sync_interval: step, ..Self::new(StrategyKind::ModelAveraging, total_budget) }
    }

    pub fn with_sync_costs(mut self, per_round: f64, per_worker: f64) -> Self {
        self.sync_cost_per_round = per_round;
        self.sync_cost_per_worker = per_worker;
        self
    }

    pub fn name(&self) -> String {
        match &self.label {
            Some(label) => label.clone(),
            None if self.kind == StrategyKind::ModelAveraging => {
                format!("model_averaging_s{}", self.sync_interval)
            }
            None => self.kind.as_str().to_string(),
        }
    }

    pub fn validate(&self, n_workers: usize) -> Result<()> {
        if self.sync_interval < 1 {
            return Err(SimError::Config("sync_interval must be >= 1".into()));
        }
        if self.total_budget < n_workers as u64 {
            return Err(SimError::Config(format!(
                "total_budget {} is smaller than the worker count {n_workers}",
                self.total_budget
            )));
        }
        let costs = [self.sync_cost_per_round, self.sync_cost_per_worker];
        if costs.iter().any(|c| !(c.is_finite() && *c >= 0.0)) {
            return Err(SimError::Config("sync costs must be finite and >= 0".into()));
        }
        if !(0.0..1.0).contains(&self.perf_smoothing) {
            return Err(SimError::Config("perf_smoothing must be in [0, 1)".into()));
        }
        Ok(())
    }

    /// AllReduce rounds performed in an epoch of `iterations` iterations.
    pub fn sync_rounds(&self, iterations: u64, epoch: usize, final_epoch: bool) -> u64 {
        match self.kind {
            StrategyKind::FixedSsgd => iterations,
            // Epochs after the first start with one extra round that gathers
            // the throughput estimates.
            StrategyKind::Dbs => iterations + u64::from(epoch > 0),
            StrategyKind::ModelAveraging => {
                let tail = self.sync_at_epoch_end && !iterations.is_multiple_of(self.sync_interval);
                iterations / self.sync_interval + u64::from(tail)
            }
            StrategyKind::OneShot => u64::from(final_epoch),
        }
    }
}

/// Compute time of one worker for one epoch.
pub fn epoch_gpu_time(profile: &WorkerProfile, samples_assigned: u64, iterations: u64, epoch: usize) -> f64 {
    profile.effective_cost(epoch) * samples_assigned as f64
        + profile.per_iteration_overhead * iterations as f64
        + profile.extra_seconds(epoch)
}

pub fn sync_time_for_epoch(config: &StrategyConfig, n_workers: usize, sync_rounds: u64) -> f64 {
    sync_rounds as f64 * (config.sync_cost_per_round + config.sync_cost_per_worker * n_workers as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub per_worker_gpu: Vec<f64>,
    pub per_worker_wait: Vec<f64>,
    pub sync_time: f64,
    pub epoch_wall_time: f64,
    pub iterations: u64,
    pub sync_rounds: u64,
    pub plan: PartitionPlan,
}

impl EpochStats {
    /// Slowest over fastest compute time.
    pub fn imbalance_ratio(&self) -> f64 {
        let max = self.per_worker_gpu.iter().cloned().fold(f64::MIN, f64::max);
        let min = self.per_worker_gpu.iter().cloned().fold(f64::MAX, f64::min);
        max / min
    }

    pub fn max_gpu(&self) -> f64 {
        self.per_worker_gpu.iter().cloned().fold(0.0, f64::max)
    }
}

/// Simulates one epoch under `plan`.
///
/// `final_epoch` only matters for one-shot averaging, which synchronizes once
/// at the very end of training.
pub fn run_epoch(
    profiles: &[WorkerProfile],
    plan: &PartitionPlan,
    config: &StrategyConfig,
    epoch: usize,
    final_epoch: bool,
) -> Result<EpochStats> {
    if plan.n_workers() != profiles.len() {
        return Err(SimError::LengthMismatch { plan: plan.n_workers(), profiles: profiles.len() });
    }
    let iterations = plan.iterations();
    let per_worker_gpu: Vec<f64> = profiles
        .iter()
        .enumerate()
        .map(|(i, p)| epoch_gpu_time(p, plan.samples_processed(i), iterations, epoch))
        .collect();
    let slowest = per_worker_gpu.iter().cloned().fold(0.0, f64::max);
    let per_worker_wait = per_worker_gpu.iter().map(|t| slowest - t).collect();
    let sync_rounds = config.sync_rounds(iterations, epoch, final_epoch);
    let sync_time = sync_time_for_epoch(config, profiles.len(), sync_rounds);
    Ok(EpochStats {
        epoch,
        per_worker_gpu,
        per_worker_wait,
        sync_time,
        epoch_wall_time: slowest + sync_time,
        iterations,
        sync_rounds,
        plan: plan.clone(),
    })
}

/// Simulates `n_epochs` epochs. Under `dbs` every epoch after the first is
/// planned from the previous epoch's shares and compute times; the other
/// strategies keep the even plan throughout.
pub fn run_training(
    profiles: &[WorkerProfile],
    config: &StrategyConfig,
    dataset_size: u64,
    n_epochs: usize,
    seed: u64,
) -> Result<Vec<EpochStats>> {
    run_training_with_jitter(profiles, config, dataset_size, n_epochs, seed, 0.0)
}

/// Like [`run_training`], with each worker's per-sample cost multiplied every
/// epoch by a log-normal factor of log-scale `timing_jitter` drawn from a
/// generator seeded with `seed`.
pub fn run_training_with_jitter(
    profiles: &[WorkerProfile],
    config: &StrategyConfig,
    dataset_size: u64,
    n_epochs: usize,
    seed: u64,
    timing_jitter: f64,
) -> Result<Vec<EpochStats>> {
    let n = profiles.len();
    if n == 0 {
        return Err(SimError::Config("at least one worker is required".into()));
    }
    if n_epochs == 0 {
        return Err(SimError::Config("n_epochs must be >= 1".into()));
    }
    if dataset_size < config.total_budget {
        return Err(SimError::Config(format!(
            "dataset_size {dataset_size} is smaller than total_budget {}",
            config.total_budget
        )));
    }
    if !(timing_jitter.is_finite() && timing_jitter >= 0.0) {
        return Err(SimError::Config("timing_jitter must be >= 0".into()));
    }
    config.validate(n)?;
    for p in profiles {
        p.validate()?;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let jitter = LogNormal::new(0.0, timing_jitter).map_err(|e| SimError::Config(e.to_string()))?;
    let mut scheduler = DbsScheduler::new(n, config.total_budget, dataset_size, config.perf_smoothing)?;
    let mut plan = dbs::even_plan(n, config.total_budget, dataset_size, 0)?;
    let mut history: Vec<EpochStats> = Vec::with_capacity(n_epochs);

    for epoch in 0..n_epochs {
        if let Some(prev) = history.last() {
            plan = match config.kind {
                StrategyKind::Dbs => scheduler.next_plan(&prev.plan.shares(), &prev.per_worker_gpu, epoch)?,
                _ => PartitionPlan { epoch, ..prev.plan.clone() },
            };
        }
        let stats = if timing_jitter > 0.0 {
            let jittered: Vec<WorkerProfile> = profiles.iter().map(|p| p.scaled(jitter.sample(&mut rng))).collect();
            run_epoch(&jittered, &plan, config, epoch, epoch + 1 == n_epochs)?
        } else {
            run_epoch(profiles, &plan, config, epoch, epoch + 1 == n_epochs)?
        };
        history.push(stats);
    }
    Ok(history)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CumulativeTimes {
    pub total_ta: f64,
    pub total_gpu_per_worker: Vec<f64>,
    /// Idle time summed over workers and epochs.
    pub total_wait: f64,
    pub total_sync: f64,
}

pub fn cumulative_times(stats: &[EpochStats]) -> Result<CumulativeTimes> {
    let first = stats.first().ok_or(SimError::EmptyStats)?;
    let mut gpu = vec![0.0; first.per_worker_gpu.len()];
    let mut total_ta = 0.0;
    let mut total_wait = 0.0;
    let mut total_sync = 0.0;
    for s in stats {
        total_ta += s.epoch_wall_time;
        total_sync += s.sync_time;
        total_wait += s.per_worker_wait.iter().sum::<f64>();
        for (acc, t) in gpu.iter_mut().zip(&s.per_worker_gpu) {
            *acc += t;
        }
    }
    Ok(CumulativeTimes { total_ta, total_gpu_per_worker: gpu, total_wait, total_sync })
}
