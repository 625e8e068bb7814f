//! Dynamic batch size scheduling.
//!
//! Each epoch every worker's throughput is measured as the share of the dataset
//! it processed divided by the compute time it took. The fixed cluster-wide
//! batch budget `B` is then split in proportion to those throughputs, rounded
//! to integers ("twice rounding"), and turned into contiguous dataset ranges
//! for the next epoch.
//!
//! Ranges are kept as exact integer ratios over `sum(int_batches)` so that the
//! partition tiles `[0, 1]` without floating-point gaps.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance used when checking that batch fractions sum to one.
pub const FRACTION_SUM_TOLERANCE: f64 = 1e-9;

/// Relative spread below which throughputs count as identical.
pub const EQUAL_PERF_TOLERANCE: f64 = 1e-12;

/// Tolerance used when checking that real batch sizes sum to the budget.
pub const BUDGET_SUM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DbsError {
    #[error("invalid measurement: share {share} over {epoch_time} s")]
    InvalidMeasurement { share: f64, epoch_time: f64 },
    #[error("invalid performance estimate for worker {worker}: {value}")]
    InvalidPerformance { worker: usize, value: f64 },
    #[error("no performance estimates supplied")]
    NoWorkers,
    #[error("batch fractions sum to {sum}, expected 1")]
    FractionsNotNormalized { sum: f64 },
    #[error("total batch budget {budget} is smaller than the worker count {workers}")]
    BudgetTooSmall { budget: u64, workers: usize },
    #[error("invalid real batch size for worker {worker}: {value}")]
    InvalidBatch { worker: usize, value: f64 },
    #[error("real batch sizes sum to {sum}, expected the budget {budget}")]
    BudgetMismatch { sum: f64, budget: u64 },
    #[error("cannot partition a dataset with all-zero batch sizes")]
    EmptyPartition,
    #[error("dataset of {dataset_size} samples is smaller than the worker count {workers}")]
    DatasetTooSmall { dataset_size: u64, workers: usize },
    #[error("ranges do not tile [0, 1]: {0}")]
    InvalidRanges(String),
    #[error("length mismatch: {shares} shares but {times} times")]
    LengthMismatch { shares: usize, times: usize },
    #[error("smoothing factor {0} outside [0, 1)")]
    InvalidSmoothing(f64),
}

pub type Result<T> = std::result::Result<T, DbsError>;

/// Estimated throughput of one worker, in dataset fraction per second.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerfEstimate {
    pub worker_id: usize,
    pub value: f64,
}

/// An exact ratio `numerator / denominator` of the dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExactFraction {
    pub num: u64,
    pub den: u64,
}

impl ExactFraction {
    pub fn new(num: u64, den: u64) -> Self {
        debug_assert!(den > 0);
        Self { num, den }
    }

    pub fn as_f64(&self) -> f64 {
        self.num as f64 / self.den as f64
    }

    /// `floor(self * n)` computed without rounding error.
    pub fn floor_mul(&self, n: u64) -> u64 {
        ((self.num as u128 * n as u128) / self.den as u128) as u64
    }

    pub fn less_than(&self, other: &ExactFraction) -> bool {
        (self.num as u128) * (other.den as u128) < (other.num as u128) * (self.den as u128)
    }

    /// Value equality across different denominators.
    pub fn same_value(&self, other: &ExactFraction) -> bool {
        self.num as u128 * other.den as u128 == other.num as u128 * self.den as u128
    }
}

/// The `[lower, upper)` slice of the dataset owned by one worker.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FractionRange {
    pub lower: ExactFraction,
    pub upper: ExactFraction,
}

impl FractionRange {
    pub fn width(&self) -> ExactFraction {
        debug_assert_eq!(self.lower.den, self.upper.den);
        ExactFraction::new(self.upper.num - self.lower.num, self.upper.den)
    }

    pub fn is_empty(&self) -> bool {
        self.lower.same_value(&self.upper)
    }
}

/// Half-open sample index span `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleSpan {
    pub start: u64,
    pub end: u64,
}

impl SampleSpan {
    pub fn len(&self) -> u64 {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }
}

/// Every intermediate of one batch apportionment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchAllocation {
    pub fractions: Vec<f64>,
    pub real_batches: Vec<f64>,
    pub int_batches: Vec<u64>,
    pub total_budget: u64,
}

/// Per-worker batch sizes and dataset slices for one epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionPlan {
    pub epoch: usize,
    pub int_batches: Vec<u64>,
    pub ranges: Vec<FractionRange>,
    pub sample_spans: Vec<SampleSpan>,
    pub dataset_size: u64,
}

impl PartitionPlan {
    pub fn n_workers(&self) -> usize {
        self.int_batches.len()
    }

    pub fn batch_sum(&self) -> u64 {
        self.int_batches.iter().sum()
    }

    /// Synchronized iterations per epoch: every worker runs the same count and
    /// the samples left over after the last full round are dropped.
    pub fn iterations(&self) -> u64 {
        match self.batch_sum() {
            0 => 0,
            s => self.dataset_size / s,
        }
    }

    /// Dataset share of each worker as a float (the `d_i` of the throughput
    /// estimate).
    pub fn shares(&self) -> Vec<f64> {
        self.ranges.iter().map(|r| r.width().as_f64()).collect()
    }

    /// Samples actually consumed by worker `i` in one epoch.
    pub fn samples_processed(&self, worker: usize) -> u64 {
        self.iterations() * self.int_batches[worker]
    }

    /// Same batches and ranges, ignoring the epoch tag.
    pub fn same_partition(&self, other: &PartitionPlan) -> bool {
        self.int_batches == other.int_batches
            && self.sample_spans == other.sample_spans
            && self.dataset_size == other.dataset_size
    }
}

/// Throughput `share / epoch_time` of one worker.
pub fn evaluate_performance(share: f64, epoch_time: f64) -> Result<f64> {
    let valid = share.is_finite() && epoch_time.is_finite() && share > 0.0 && share <= 1.0 && epoch_time > 0.0;
    if !valid {
        return Err(DbsError::InvalidMeasurement { share, epoch_time });
    }
    Ok(share / epoch_time)
}

/// Normalizes throughputs into batch fractions `p_i / sum(p)`.
pub fn compute_batch_fractions(perfs: &[PerfEstimate]) -> Result<Vec<f64>> {
    if perfs.is_empty() {
        return Err(DbsError::NoWorkers);
    }
    for (worker, p) in perfs.iter().enumerate() {
        if !(p.value.is_finite() && p.value > 0.0) {
            return Err(DbsError::InvalidPerformance { worker, value: p.value });
        }
    }
    // Throughputs that agree to 12 significant digits give exactly 1/n, so a
    // balanced cluster stays on the even plan despite division rounding.
    let max = perfs.iter().map(|p| p.value).fold(f64::MIN, f64::max);
    let min = perfs.iter().map(|p| p.value).fold(f64::MAX, f64::min);
    if max - min <= EQUAL_PERF_TOLERANCE * max {
        return Ok(vec![1.0 / perfs.len() as f64; perfs.len()]);
    }
    let total: f64 = perfs.iter().map(|p| p.value).sum();
    Ok(perfs.iter().map(|p| p.value / total).collect())
}

pub fn scale_to_real_batches(fractions: &[f64], total_budget: u64) -> Result<Vec<f64>> {
    if fractions.is_empty() {
        return Err(DbsError::NoWorkers);
    }
    if total_budget < fractions.len() as u64 {
        return Err(DbsError::BudgetTooSmall { budget: total_budget, workers: fractions.len() });
    }
    let sum: f64 = fractions.iter().sum();
    if (sum - 1.0).abs() > FRACTION_SUM_TOLERANCE || fractions.iter().any(|f| *f < 0.0) {
        return Err(DbsError::FractionsNotNormalized { sum });
    }
    let budget = total_budget as f64;
    Ok(fractions.iter().map(|f| f * budget).collect())
}

/// Integerizes real batch sizes.
///
/// Every value is first rounded down, leaving `k = B - sum(floor)` units of
/// budget. Values are then ranked by decimal fraction (descending, ties by
/// ascending worker index) and at most `k` of them are rounded up, but only
/// those whose decimal fraction is at least 0.5. The result never exceeds the
/// budget and may fall short of it.
pub fn round_twice(real_batches: &[f64], total_budget: u64) -> Result<Vec<u64>> {
    for (worker, &value) in real_batches.iter().enumerate() {
        if !(value.is_finite() && value >= 0.0) {
            return Err(DbsError::InvalidBatch { worker, value });
        }
    }
    let sum: f64 = real_batches.iter().sum();
    if (sum - total_budget as f64).abs() > BUDGET_SUM_TOLERANCE {
        return Err(DbsError::BudgetMismatch { sum, budget: total_budget });
    }

    let mut rounded: Vec<u64> = real_batches.iter().map(|b| b.floor() as u64).collect();
    let decimals: Vec<f64> = real_batches.iter().map(|b| b - b.floor()).collect();
    let spare = total_budget.saturating_sub(rounded.iter().sum()) as usize;

    // sort_by is stable, so equal decimals keep ascending index order.
    let mut order: Vec<usize> = (0..real_batches.len()).collect();
    order.sort_by(|&a, &b| decimals[b].total_cmp(&decimals[a]));

    for &i in order.iter().take_while(|&&i| decimals[i] >= 0.5).take(spare) {
        rounded[i] += 1;
    }
    Ok(rounded)
}

/// Raises zero batches to one so no worker stalls a synchronization round.
///
/// When a raise pushes the sum above the budget, the largest batch (lowest
/// index on ties) gives up one sample.
pub fn enforce_min_batch(int_batches: &[u64], total_budget: u64) -> Result<Vec<u64>> {
    if total_budget < int_batches.len() as u64 {
        return Err(DbsError::BudgetTooSmall { budget: total_budget, workers: int_batches.len() });
    }
    let mut batches = int_batches.to_vec();
    for i in 0..batches.len() {
        if batches[i] > 0 {
            continue;
        }
        batches[i] = 1;
        if batches.iter().sum::<u64>() > total_budget {
            // sum > B >= n guarantees some batch is at least 2.
            let largest =
                (0..batches.len()).max_by(|&a, &b| batches[a].cmp(&batches[b]).then(b.cmp(&a))).expect("non-empty");
            batches[largest] -= 1;
        }
    }
    Ok(batches)
}

/// Contiguous `[L_i, K_i)` ranges with widths `B'_i / sum(B')`.
pub fn partition_ranges(int_batches: &[u64]) -> Result<Vec<FractionRange>> {
    let total: u64 = int_batches.iter().sum();
    if int_batches.is_empty() || total == 0 {
        return Err(DbsError::EmptyPartition);
    }
    let mut lower = 0;
    Ok(int_batches
        .iter()
        .map(|&b| {
            let range =
                FractionRange { lower: ExactFraction::new(lower, total), upper: ExactFraction::new(lower + b, total) };
            lower += b;
            range
        })
        .collect())
}

fn check_tiling(ranges: &[FractionRange]) -> Result<()> {
    let first = ranges.first().ok_or(DbsError::EmptyPartition)?;
    let last = ranges.last().expect("non-empty");
    if first.lower.num != 0 {
        return Err(DbsError::InvalidRanges("first range does not start at 0".into()));
    }
    if !last.upper.same_value(&ExactFraction::new(1, 1)) {
        return Err(DbsError::InvalidRanges("last range does not end at 1".into()));
    }
    for (i, pair) in ranges.windows(2).enumerate() {
        if !pair[0].upper.same_value(&pair[1].lower) {
            return Err(DbsError::InvalidRanges(format!("gap between ranges {i} and {}", i + 1)));
        }
    }
    for (i, r) in ranges.iter().enumerate() {
        if r.upper.less_than(&r.lower) {
            return Err(DbsError::InvalidRanges(format!("range {i} is reversed")));
        }
    }
    Ok(())
}

/// Maps fractional ranges onto sample indices.
///
/// Boundaries are `floor(L_i * dataset_size)`; the last span ends at
/// `dataset_size`. Boundaries are then nudged so that every non-empty range
/// keeps at least one sample.
pub fn spans_from_ranges(ranges: &[FractionRange], dataset_size: u64) -> Result<Vec<SampleSpan>> {
    check_tiling(ranges)?;
    let n = ranges.len();
    if dataset_size < n as u64 {
        return Err(DbsError::DatasetTooSmall { dataset_size, workers: n });
    }
    let needs_sample: Vec<u64> = ranges.iter().map(|r| u64::from(!r.is_empty())).collect();
    let mut starts: Vec<u64> = ranges.iter().map(|r| r.lower.floor_mul(dataset_size)).collect();

    for i in 1..n {
        starts[i] = starts[i].max(starts[i - 1] + needs_sample[i - 1]);
    }
    let mut bound = dataset_size;
    for i in (0..n).rev() {
        bound -= needs_sample[i];
        starts[i] = starts[i].min(bound);
        bound = starts[i];
    }

    Ok((0..n)
        .map(|i| SampleSpan { start: starts[i], end: if i + 1 < n { starts[i + 1] } else { dataset_size } })
        .collect())
}

/// Fractions, real batches and integer batches for a set of throughputs.
pub fn allocate_batches(perfs: &[PerfEstimate], total_budget: u64) -> Result<BatchAllocation> {
    let fractions = compute_batch_fractions(perfs)?;
    let real_batches = scale_to_real_batches(&fractions, total_budget)?;
    let int_batches = round_twice(&real_batches, total_budget)?;
    Ok(BatchAllocation { fractions, real_batches, int_batches, total_budget })
}

fn plan_from_batches(
    int_batches: Vec<u64>,
    total_budget: u64,
    dataset_size: u64,
    epoch: usize,
) -> Result<PartitionPlan> {
    let int_batches = enforce_min_batch(&int_batches, total_budget)?;
    let ranges = partition_ranges(&int_batches)?;
    let sample_spans = spans_from_ranges(&ranges, dataset_size)?;
    Ok(PartitionPlan { epoch, int_batches, ranges, sample_spans, dataset_size })
}

/// The plain data-parallel plan: `B / n` per worker (twice rounded) and even
/// ranges.
pub fn even_plan(n_workers: usize, total_budget: u64, dataset_size: u64, epoch: usize) -> Result<PartitionPlan> {
    if n_workers == 0 {
        return Err(DbsError::NoWorkers);
    }
    if total_budget < n_workers as u64 {
        return Err(DbsError::BudgetTooSmall { budget: total_budget, workers: n_workers });
    }
    let perfs: Vec<PerfEstimate> = (0..n_workers).map(|worker_id| PerfEstimate { worker_id, value: 1.0 }).collect();
    let int_batches = allocate_batches(&perfs, total_budget)?.int_batches;
    plan_from_batches(int_batches, total_budget, dataset_size, epoch)
}

/// Plan for the given throughputs.
pub fn plan_from_perfs(
    perfs: &[PerfEstimate],
    total_budget: u64,
    dataset_size: u64,
    epoch: usize,
) -> Result<PartitionPlan> {
    let allocation = allocate_batches(perfs, total_budget)?;
    plan_from_batches(allocation.int_batches, total_budget, dataset_size, epoch)
}

fn measured_perfs(prev_shares: &[f64], prev_times: &[f64]) -> Result<Vec<PerfEstimate>> {
    if prev_shares.len() != prev_times.len() {
        return Err(DbsError::LengthMismatch { shares: prev_shares.len(), times: prev_times.len() });
    }
    prev_shares
        .iter()
        .zip(prev_times)
        .enumerate()
        .map(|(worker_id, (&share, &time))| Ok(PerfEstimate { worker_id, value: evaluate_performance(share, time)? }))
        .collect()
}

/// Plan for `epoch` from the shares and compute times measured in the
/// previous epoch. Epoch 0 ignores the measurements and returns the even plan.
pub fn plan_next_epoch(
    prev_shares: &[f64],
    prev_times: &[f64],
    total_budget: u64,
    dataset_size: u64,
    epoch: usize,
) -> Result<PartitionPlan> {
    if epoch == 0 {
        if prev_shares.len() != prev_times.len() {
            return Err(DbsError::LengthMismatch { shares: prev_shares.len(), times: prev_times.len() });
        }
        return even_plan(prev_shares.len(), total_budget, dataset_size, 0);
    }
    let perfs = measured_perfs(prev_shares, prev_times)?;
    plan_from_perfs(&perfs, total_budget, dataset_size, epoch)
}

/// Stateful wrapper that can smooth throughput estimates across epochs.
///
/// With `smoothing = 0` (the default) the estimate is exactly the previous
/// epoch's measurement; otherwise `est = s * est_prev + (1 - s) * measured`.
#[derive(Debug, Clone)]
pub struct DbsScheduler {
    n_workers: usize,
    total_budget: u64,
    dataset_size: u64,
    smoothing: f64,
    estimate: Option<Vec<f64>>,
}

impl DbsScheduler {
    pub fn new(n_workers: usize, total_budget: u64, dataset_size: u64, smoothing: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&smoothing) {
            return Err(DbsError::InvalidSmoothing(smoothing));
        }
        if dataset_size < n_workers as u64 {
            return Err(DbsError::DatasetTooSmall { dataset_size, workers: n_workers });
        }
        Ok(Self { n_workers, total_budget, dataset_size, smoothing, estimate: None })
    }

    pub fn initial_plan(&self) -> Result<PartitionPlan> {
        even_plan(self.n_workers, self.total_budget, self.dataset_size, 0)
    }

    /// Consumes one epoch's measurements and returns the plan for `epoch`.
    pub fn next_plan(&mut self, prev_shares: &[f64], prev_times: &[f64], epoch: usize) -> Result<PartitionPlan> {
        if epoch == 0 {
            return plan_next_epoch(prev_shares, prev_times, self.total_budget, self.dataset_size, 0);
        }
        let measured = measured_perfs(prev_shares, prev_times)?;
        let values: Vec<f64> = match self.estimate.take() {
            Some(prev) if self.smoothing > 0.0 && prev.len() == measured.len() => prev
                .iter()
                .zip(&measured)
                .map(|(old, new)| self.smoothing * old + (1.0 - self.smoothing) * new.value)
                .collect(),
            _ => measured.iter().map(|p| p.value).collect(),
        };
        let perfs: Vec<PerfEstimate> =
            values.iter().enumerate().map(|(worker_id, &value)| PerfEstimate { worker_id, value }).collect();
        self.estimate = Some(values);
        plan_from_perfs(&perfs, self.total_budget, self.dataset_size, epoch)
    }
}
