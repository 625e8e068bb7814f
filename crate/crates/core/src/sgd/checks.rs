//! Seed-averaged experiments over the SGD lab.

use serde::{Deserialize, Serialize};

use super::{
    estimate_gradient_noise, run_parallel_sgd, theorem1_bound, verify_lemma1_variance, ConvexProblem, PlanSource,
    Result, SgdConfig, SgdError, SgdTrajectory, VarianceEstimate,
};
use crate::dbs::PartitionPlan;
use crate::sim::{self, StrategyConfig, StrategyKind, WorkerProfile};

/// Standard errors allowed before a statistical comparison fails.
pub const Z_TOLERANCE: f64 = 3.0;

/// Per-iteration mean and standard error of `||x^j - x*||^2` across seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedAverage {
    pub seeds: usize,
    pub mean: Vec<f64>,
    pub std_error: Vec<f64>,
    pub final_loss_mean: f64,
    pub final_loss_std_error: f64,
}

fn mean_and_se(values: impl Iterator<Item = f64> + Clone, n: usize) -> (f64, f64) {
    let k = n as f64;
    let mean = values.clone().sum::<f64>() / k;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = values.map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0);
    (mean, (var / k).sqrt())
}

impl SeedAverage {
    pub fn from_trajectories(runs: &[SgdTrajectory]) -> Self {
        let n = runs.len();
        let len = runs.iter().map(|r| r.squared_distances.len()).min().unwrap_or(0);
        let (mean, std_error) =
            (0..len).map(|j| mean_and_se(runs.iter().map(move |r| r.squared_distances[j]), n)).unzip();
        let (final_loss_mean, final_loss_std_error) = mean_and_se(runs.iter().map(|r| r.final_loss), n);
        Self { seeds: n, mean, std_error, final_loss_mean, final_loss_std_error }
    }
}

/// Runs `n_seeds` trajectories with seeds `base_seed..base_seed + n_seeds`.
///
/// Seeds are split across threads but results are returned in seed order, so
/// every reduction over them is reproducible.
pub fn run_seeds(
    problem: &ConvexProblem,
    config: &SgdConfig,
    n_workers: usize,
    plans: &PlanSource,
    x0: &[f64],
    n_seeds: usize,
    base_seed: u64,
) -> Result<Vec<SgdTrajectory>> {
    config.validate(problem.mu())?;
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get()).min(n_seeds.max(1));
    let chunk = n_seeds.div_ceil(threads.max(1)).max(1);
    let seeds: Vec<u64> = (0..n_seeds as u64).map(|s| base_seed + s).collect();
    let chunks: Vec<Result<Vec<SgdTrajectory>>> = std::thread::scope(|scope| {
        let handles: Vec<_> = seeds
            .chunks(chunk)
            .map(|part| {
                scope.spawn(move || {
                    part.iter()
                        .map(|&seed| {
                            let cfg = SgdConfig { seed, ..config.clone() };
                            run_parallel_sgd(problem, &cfg, n_workers, plans, x0)
                        })
                        .collect::<Result<Vec<_>>>()
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("seed worker panicked")).collect()
    });
    let mut out = Vec::with_capacity(n_seeds);
    for c in chunks {
        out.extend(c?);
    }
    Ok(out)
}

/// Plans an adaptive scheduler produces on a simulated heterogeneous cluster,
/// one per epoch.
pub fn dbs_plan_stream(
    worker_costs: &[f64],
    total_budget: u64,
    dataset_size: u64,
    n_epochs: usize,
) -> Result<Vec<PartitionPlan>> {
    let profiles: Vec<WorkerProfile> =
        worker_costs.iter().enumerate().map(|(i, &c)| WorkerProfile::new(i, c)).collect();
    let config = StrategyConfig::new(StrategyKind::Dbs, total_budget);
    let stats = sim::run_training(&profiles, &config, dataset_size, n_epochs, 0)
        .map_err(|e| SgdError::InvalidConfig(e.to_string()))?;
    Ok(stats.into_iter().map(|s| s.plan).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundCheck {
    pub step_size: f64,
    pub gamma_mu: f64,
    pub sigma_sq: f64,
    pub seeds: usize,
    pub iterations: usize,
    /// Smallest `bound + 3 SE - mean` over all iterations.
    pub worst_slack: f64,
    pub worst_iteration: usize,
    /// Seed-mean `||x^j - x*||^2` for `j = 0..=iterations`.
    pub mean_trajectory: Vec<f64>,
    pub bound_values: Vec<f64>,
    pub passed: bool,
}

/// Probe points on the straight path from `x0` to the optimum, which the
/// expected iterate follows for plain SGD on the quadratic family.
pub fn path_probes(problem: &ConvexProblem, x0: &[f64], count: usize) -> Vec<Vec<f64>> {
    let opt = problem.optimum();
    (0..=count)
        .map(|k| {
            let t = k as f64 / count.max(1) as f64;
            x0.iter().zip(opt).map(|(a, b)| a + t * (b - a)).collect()
        })
        .collect()
}

/// Checks that the seed-mean squared distance stays below the convergence
/// bound (plus three standard errors) at every iteration.
pub fn check_theorem1(
    problem: &ConvexProblem,
    config: &SgdConfig,
    plan: &PartitionPlan,
    x0: &[f64],
    n_seeds: usize,
    base_seed: u64,
) -> Result<BoundCheck> {
    let n_workers = plan.n_workers();
    let budget = plan.batch_sum() as usize;
    let probes = path_probes(problem, x0, 8);
    let sigma_sq = estimate_gradient_noise(problem, &probes, budget, 1000, base_seed ^ 0x5eed)?;
    let runs = run_seeds(problem, config, n_workers, &PlanSource::Fixed(plan.clone()), x0, n_seeds, base_seed)?;
    let avg = SeedAverage::from_trajectories(&runs);
    let d0 = problem.squared_distance_to_optimum(x0);
    let mu = problem.mu();
    let bound_values = (0..avg.mean.len())
        .map(|j| theorem1_bound(j, config.step_size, mu, d0, sigma_sq))
        .collect::<Result<Vec<_>>>()?;
    let mut worst_slack = f64::INFINITY;
    let mut worst_iteration = 0;
    for (j, (m, se)) in avg.mean.iter().zip(&avg.std_error).enumerate() {
        let slack = bound_values[j] + Z_TOLERANCE * se - m;
        if slack < worst_slack {
            worst_slack = slack;
            worst_iteration = j;
        }
    }
    Ok(BoundCheck {
        step_size: config.step_size,
        gamma_mu: config.step_size * mu,
        sigma_sq,
        seeds: n_seeds,
        iterations: config.n_iterations,
        worst_slack,
        worst_iteration,
        mean_trajectory: avg.mean,
        bound_values,
        passed: worst_slack >= 0.0,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceCheck {
    pub estimates: Vec<VarianceEstimate>,
    /// `variance(m_k) / variance(m_{k+1})` for consecutive batch sizes.
    pub ratios: Vec<f64>,
    pub non_increasing: bool,
    /// Every `m -> 4m` ratio lies within `4 * (1 +- ratio_tolerance)`.
    pub ratio_ok: bool,
    pub ratio_tolerance: f64,
    pub passed: bool,
}

pub fn check_lemma1(
    problem: &ConvexProblem,
    x: &[f64],
    m_values: &[usize],
    n_draws: usize,
    seed: u64,
    ratio_tolerance: f64,
) -> Result<VarianceCheck> {
    let estimates = verify_lemma1_variance(problem, x, m_values, n_draws, seed, true)?;
    let mut ratios = Vec::new();
    let mut non_increasing = true;
    let mut ratio_ok = true;
    for pair in estimates.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        let se = (a.std_error.powi(2) + b.std_error.powi(2)).sqrt();
        non_increasing &= b.variance <= a.variance + Z_TOLERANCE * se;
        let ratio = a.variance / b.variance;
        ratios.push(ratio);
        if b.m == 4 * a.m {
            ratio_ok &= (ratio - 4.0).abs() <= 4.0 * ratio_tolerance;
        }
    }
    Ok(VarianceCheck {
        estimates,
        ratios,
        non_increasing,
        ratio_ok,
        ratio_tolerance,
        passed: non_increasing && ratio_ok,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceCheck {
    pub seeds: usize,
    pub iterations: usize,
    pub fixed_final_loss: f64,
    pub dbs_final_loss: f64,
    /// `|dbs - fixed| / fixed` of the seed-mean final optimality gap.
    pub relative_difference: f64,
    pub relative_tolerance: f64,
    /// Largest per-iteration `|mean_dbs - mean_fixed| / SE(difference)`.
    pub max_z: f64,
    pub fixed_mean_trajectory: Vec<f64>,
    pub dbs_mean_trajectory: Vec<f64>,
    pub passed: bool,
}

/// Compares fixed-even and scheduler-driven batch schedules over the same
/// seeds.
#[allow(clippy::too_many_arguments)]
pub fn check_equivalence(
    problem: &ConvexProblem,
    config: &SgdConfig,
    fixed: &PartitionPlan,
    adaptive: &[PartitionPlan],
    x0: &[f64],
    n_seeds: usize,
    base_seed: u64,
    relative_tolerance: f64,
) -> Result<EquivalenceCheck> {
    let n_workers = fixed.n_workers();
    let a = SeedAverage::from_trajectories(&run_seeds(
        problem,
        config,
        n_workers,
        &PlanSource::Fixed(fixed.clone()),
        x0,
        n_seeds,
        base_seed,
    )?);
    let b = SeedAverage::from_trajectories(&run_seeds(
        problem,
        config,
        n_workers,
        &PlanSource::Stream(adaptive.to_vec()),
        x0,
        n_seeds,
        base_seed,
    )?);
    let max_z = a
        .mean
        .iter()
        .zip(&b.mean)
        .zip(a.std_error.iter().zip(&b.std_error))
        .map(|((ma, mb), (sa, sb))| {
            let se = (sa * sa + sb * sb).sqrt();
            if se > 0.0 {
                (ma - mb).abs() / se
            } else if ma == mb {
                0.0
            } else {
                f64::INFINITY
            }
        })
        .fold(0.0, f64::max);
    let relative_difference = (b.final_loss_mean - a.final_loss_mean).abs() / a.final_loss_mean;
    Ok(EquivalenceCheck {
        seeds: n_seeds,
        iterations: config.n_iterations,
        fixed_final_loss: a.final_loss_mean,
        dbs_final_loss: b.final_loss_mean,
        relative_difference,
        relative_tolerance,
        max_z,
        passed: relative_difference <= relative_tolerance && max_z <= Z_TOLERANCE,
        fixed_mean_trajectory: a.mean,
        dbs_mean_trajectory: b.mean,
    })
}
