//! Mini-batch SGD on strongly convex problems with fixed or scheduler-driven
//! per-worker batch sizes.
//!
//! Workers draw their batches without replacement from their own sample span;
//! the per-worker mean gradients are combined into one update of the shared
//! iterate. With batch-weighted aggregation the combined gradient equals the
//! mean gradient over the union of all worker batches.

pub mod checks;
pub mod problem;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dbs::{DbsError, PartitionPlan};
pub use problem::{ConvexProblem, LogisticRegression, QuadraticFamily};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SgdError {
    #[error("mini-batch is empty")]
    EmptyBatch,
    #[error("sample index {index} out of range for {sample_count} samples")]
    IndexOutOfRange { index: usize, sample_count: usize },
    #[error("configuration error: {0}")]
    InvalidConfig(String),
    #[error("step size {gamma} is outside (0, 1/mu) for mu = {mu}")]
    InvalidStepSize { gamma: f64, mu: f64 },
    #[error(transparent)]
    Dbs(#[from] DbsError),
}

pub type Result<T> = std::result::Result<T, SgdError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    /// `(1/n) sum_i g_i`, the literal data-parallel update.
    UniformAverage,
    /// `sum_i (b_i / sum b) g_i`, the exact mean over all sampled examples.
    BatchWeighted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub step_size: f64,
    pub momentum: f64,
    pub n_iterations: usize,
    pub aggregation: Aggregation,
    pub seed: u64,
}

impl SgdConfig {
    pub fn new(step_size: f64, n_iterations: usize, seed: u64) -> Self {
        Self { step_size, momentum: 0.0, n_iterations, aggregation: Aggregation::BatchWeighted, seed }
    }

    pub fn validate(&self, mu: f64) -> Result<()> {
        let scaled = self.step_size * mu;
        if !(scaled > 0.0 && scaled < 1.0) {
            return Err(SgdError::InvalidStepSize { gamma: self.step_size, mu });
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(SgdError::InvalidConfig(format!("momentum must be in [0, 1), got {}", self.momentum)));
        }
        Ok(())
    }
}

/// Where per-worker batch sizes and spans come from.
#[derive(Debug, Clone, PartialEq)]
pub enum PlanSource {
    /// One plan for every epoch.
    Fixed(PartitionPlan),
    /// Plan `e` for epoch `e`; the last plan repeats once the stream ends.
    Stream(Vec<PartitionPlan>),
}

impl PlanSource {
    fn plan(&self, epoch: usize) -> Option<&PartitionPlan> {
        match self {
            PlanSource::Fixed(p) => Some(p),
            PlanSource::Stream(plans) => plans.get(epoch).or(plans.last()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SgdTrajectory {
    /// `||x^j - x*||^2` for `j = 0..=n_iterations`.
    pub squared_distances: Vec<f64>,
    /// Theorem bound for the same `j`, filled by [`SgdTrajectory::with_bound`].
    pub bound_values: Vec<f64>,
    /// `f(x^J) - f(x*)`.
    pub final_loss: f64,
}

impl SgdTrajectory {
    pub fn with_bound(mut self, gamma: f64, mu: f64, sigma_sq: f64) -> Result<Self> {
        let d0 = self.squared_distances.first().copied().unwrap_or(0.0);
        self.bound_values = (0..self.squared_distances.len())
            .map(|j| theorem1_bound(j, gamma, mu, d0, sigma_sq))
            .collect::<Result<_>>()?;
        Ok(self)
    }
}

/// Mean of the per-sample gradients over `indices`.
pub fn minibatch_gradient(problem: &ConvexProblem, x: &[f64], indices: &[usize]) -> Result<Vec<f64>> {
    if indices.is_empty() {
        return Err(SgdError::EmptyBatch);
    }
    let sample_count = problem.sample_count();
    let mut g = vec![0.0; x.len()];
    for &index in indices {
        if index >= sample_count {
            return Err(SgdError::IndexOutOfRange { index, sample_count });
        }
        problem.add_sample_gradient(index, x, &mut g);
    }
    let m = indices.len() as f64;
    g.iter_mut().for_each(|v| *v /= m);
    Ok(g)
}

/// Combines per-worker gradients, summing in worker order.
pub fn aggregate_gradients(grads: &[Vec<f64>], batch_sizes: &[u64], mode: Aggregation) -> Result<Vec<f64>> {
    if grads.len() != batch_sizes.len() {
        return Err(SgdError::InvalidConfig(format!(
            "{} gradients but {} batch sizes",
            grads.len(),
            batch_sizes.len()
        )));
    }
    let first = grads.first().ok_or(SgdError::EmptyBatch)?;
    if batch_sizes.contains(&0) {
        return Err(SgdError::InvalidConfig("batch sizes must be positive".into()));
    }
    if grads.iter().any(|g| g.len() != first.len()) {
        return Err(SgdError::InvalidConfig("gradient dimensions differ".into()));
    }
    let total: u64 = batch_sizes.iter().sum();
    let mut out = vec![0.0; first.len()];
    for (g, &b) in grads.iter().zip(batch_sizes) {
        let w = match mode {
            Aggregation::UniformAverage => 1.0 / grads.len() as f64,
            Aggregation::BatchWeighted => b as f64 / total as f64,
        };
        for (o, v) in out.iter_mut().zip(g) {
            *o += w * v;
        }
    }
    Ok(out)
}

/// One heavy-ball step: `v' = beta v + g`, `x' = x - gamma v'`.
pub fn sgd_step(x: &[f64], gradient: &[f64], config: &SgdConfig, velocity: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let v: Vec<f64> = velocity.iter().zip(gradient).map(|(v, g)| config.momentum * v + g).collect();
    let x = x.iter().zip(&v).map(|(x, v)| x - config.step_size * v).collect();
    (x, v)
}

/// `(1 - gamma mu)^j d0 + gamma sigma^2 / mu`.
pub fn theorem1_bound(j: usize, gamma: f64, mu: f64, initial_sq_dist: f64, sigma_sq: f64) -> Result<f64> {
    let rate = gamma * mu;
    if !(rate > 0.0 && rate < 1.0) {
        return Err(SgdError::InvalidStepSize { gamma, mu });
    }
    if sigma_sq < 0.0 || initial_sq_dist < 0.0 {
        return Err(SgdError::InvalidConfig("sigma_sq and initial distance must be >= 0".into()));
    }
    Ok((1.0 - rate).powi(j as i32) * initial_sq_dist + gamma * sigma_sq / mu)
}

/// Per-worker sampler over a span: shuffled once per pass, consumed in order.
struct SpanSampler {
    order: Vec<usize>,
    cursor: usize,
}

impl SpanSampler {
    fn new(start: u64, end: u64, rng: &mut ChaCha8Rng) -> Self {
        let mut order: Vec<usize> = (start as usize..end as usize).collect();
        order.shuffle(rng);
        Self { order, cursor: 0 }
    }

    fn draw(&mut self, batch: usize, rng: &mut ChaCha8Rng) -> &[usize] {
        let batch = batch.min(self.order.len());
        if self.cursor + batch > self.order.len() {
            self.order.shuffle(rng);
            self.cursor = 0;
        }
        let out = &self.order[self.cursor..self.cursor + batch];
        self.cursor += batch;
        out
    }
}

/// Runs synchronized data-parallel SGD from `x0`.
///
/// Each epoch takes its plan from `plans`; every worker reshuffles its span and
/// draws `int_batches[i]` samples per iteration. Epochs last
/// `plan.iterations()` steps, and the run stops after `config.n_iterations`
/// steps in total.
pub fn run_parallel_sgd(
    problem: &ConvexProblem,
    config: &SgdConfig,
    n_workers: usize,
    plans: &PlanSource,
    x0: &[f64],
) -> Result<SgdTrajectory> {
    config.validate(problem.mu())?;
    if x0.len() != problem.dimension() {
        return Err(SgdError::InvalidConfig("starting point has the wrong dimension".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut x = x0.to_vec();
    let mut velocity = vec![0.0; x.len()];
    let mut squared_distances = Vec::with_capacity(config.n_iterations + 1);
    squared_distances.push(problem.squared_distance_to_optimum(&x));

    let mut step = 0;
    let mut epoch = 0;
    while step < config.n_iterations {
        let plan = plans.plan(epoch).ok_or_else(|| SgdError::InvalidConfig("empty plan stream".into()))?;
        if plan.n_workers() != n_workers {
            return Err(SgdError::InvalidConfig(format!(
                "plan for epoch {epoch} has {} workers, expected {n_workers}",
                plan.n_workers()
            )));
        }
        if plan.dataset_size as usize != problem.sample_count() {
            return Err(SgdError::InvalidConfig("plan dataset size differs from the problem".into()));
        }
        let iterations = plan.iterations() as usize;
        if iterations == 0 {
            return Err(SgdError::InvalidConfig("plan yields zero iterations per epoch".into()));
        }
        let mut samplers: Vec<SpanSampler> =
            plan.sample_spans.iter().map(|s| SpanSampler::new(s.start, s.end, &mut rng)).collect();
        for _ in 0..iterations.min(config.n_iterations - step) {
            let mut grads = Vec::with_capacity(n_workers);
            let mut sizes = Vec::with_capacity(n_workers);
            for (sampler, &b) in samplers.iter_mut().zip(&plan.int_batches) {
                let batch = sampler.draw(b as usize, &mut rng);
                sizes.push(batch.len() as u64);
                grads.push(minibatch_gradient(problem, &x, batch)?);
            }
            let g = aggregate_gradients(&grads, &sizes, config.aggregation)?;
            (x, velocity) = sgd_step(&x, &g, config, &velocity);
            squared_distances.push(problem.squared_distance_to_optimum(&x));
            step += 1;
        }
        epoch += 1;
    }
    Ok(SgdTrajectory { squared_distances, bound_values: Vec::new(), final_loss: problem.optimality_gap(&x) })
}

/// Largest mean `||g_batch(x)||^2` over the probe points, with batches of
/// `batch_size` drawn uniformly without replacement from the whole dataset.
pub fn estimate_gradient_noise(
    problem: &ConvexProblem,
    probes: &[Vec<f64>],
    batch_size: usize,
    n_draws: usize,
    seed: u64,
) -> Result<f64> {
    if n_draws < 100 {
        return Err(SgdError::InvalidConfig(format!("n_draws must be >= 100, got {n_draws}")));
    }
    if batch_size == 0 || batch_size > problem.sample_count() {
        return Err(SgdError::InvalidConfig(format!("batch_size {batch_size} out of range")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for x in probes {
        let mut acc = 0.0;
        for _ in 0..n_draws {
            let batch = rand::seq::index::sample(&mut rng, problem.sample_count(), batch_size).into_vec();
            let g = minibatch_gradient(problem, x, &batch)?;
            acc += problem::dot(&g, &g);
        }
        worst = worst.max(acc / n_draws as f64);
    }
    Ok(worst)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarianceEstimate {
    pub m: usize,
    pub variance: f64,
    /// Standard error of `variance` itself.
    pub std_error: f64,
}

/// Empirical variance of the mini-batch mean `(1/m) sum f_i(x)` for each `m`.
pub fn verify_lemma1_variance(
    problem: &ConvexProblem,
    x: &[f64],
    m_values: &[usize],
    n_draws: usize,
    seed: u64,
    with_replacement: bool,
) -> Result<Vec<VarianceEstimate>> {
    use rand::Rng;

    if n_draws < 2 {
        return Err(SgdError::InvalidConfig("n_draws must be >= 2".into()));
    }
    let n = problem.sample_count();
    let values: Vec<f64> = (0..n).map(|i| problem.sample_value(i, x)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(m_values.len());
    for &m in m_values {
        if m == 0 || (!with_replacement && m > n) {
            return Err(SgdError::InvalidConfig(format!("batch size {m} out of range")));
        }
        let means: Vec<f64> = (0..n_draws)
            .map(|_| {
                let sum: f64 = if with_replacement {
                    (0..m).map(|_| values[rng.random_range(0..n)]).sum()
                } else {
                    rand::seq::index::sample(&mut rng, n, m).iter().map(|i| values[i]).sum()
                };
                sum / m as f64
            })
            .collect();
        let k = n_draws as f64;
        let mean = means.iter().sum::<f64>() / k;
        let m2 = means.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / k;
        let m4 = means.iter().map(|v| (v - mean).powi(4)).sum::<f64>() / k;
        let variance = m2 * k / (k - 1.0);
        let std_error = ((m4 - m2 * m2).max(0.0) / k).sqrt();
        out.push(VarianceEstimate { m, variance, std_error });
    }
    Ok(out)
}
