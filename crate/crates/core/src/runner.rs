//! End-to-end execution of scenarios and SGD checks with file output.

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::config::{ConfigError, ScenarioConfig};
use crate::dbs;
use crate::report::{self, ComparisonRow, RunReport, SgdCheckSummary};
use crate::sgd::checks::{check_equivalence, check_lemma1, check_theorem1};
use crate::sgd::{ConvexProblem, SgdConfig};
use crate::sim::{self, EpochStats, StrategyConfig, StrategyKind};

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Runtime(String),
}

impl RunError {
    /// 1 for configuration problems, 2 for everything that fails while running.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => 1,
            RunError::Runtime(_) => 2,
        }
    }
}

fn runtime(e: impl std::fmt::Display) -> RunError {
    RunError::Runtime(e.to_string())
}

pub type Result<T> = std::result::Result<T, RunError>;

#[derive(Debug, Clone)]
pub struct StrategyRun {
    pub strategy: StrategyConfig,
    pub stats: Vec<EpochStats>,
}

/// Simulates every strategy of `config` over the same profiles and seed.
/// With `parallel` the strategies run on separate threads; the result order is
/// the config order either way.
pub fn simulate(config: &ScenarioConfig, parallel: bool) -> Result<Vec<StrategyRun>> {
    config.validate()?;
    let profiles = config.profiles();
    let run = |strategy: StrategyConfig| -> Result<StrategyRun> {
        let stats = sim::run_training_with_jitter(
            &profiles,
            &strategy,
            config.dataset_size,
            config.n_epochs,
            config.seed,
            config.timing_jitter,
        )
        .map_err(runtime)?;
        Ok(StrategyRun { strategy, stats })
    };
    let strategies = config.strategy_configs();
    if !parallel {
        return strategies.into_iter().map(run).collect();
    }
    std::thread::scope(|scope| {
        let handles: Vec<_> = strategies.into_iter().map(|s| scope.spawn(move || run(s))).collect();
        handles.into_iter().map(|h| h.join().map_err(|_| runtime("strategy thread panicked"))?).collect()
    })
}

/// The strategy savings are measured against: fixed S-SGD when present,
/// otherwise the first strategy.
pub fn baseline_name(config: &ScenarioConfig) -> String {
    let strategies = config.strategy_configs();
    strategies.iter().find(|s| s.kind == StrategyKind::FixedSsgd).unwrap_or(&strategies[0]).name()
}

pub fn build_reports(config: &ScenarioConfig, runs: &[StrategyRun]) -> Result<Vec<RunReport>> {
    let mut reports: Vec<RunReport> =
        runs.iter().map(|r| RunReport::from_stats(&config.name, &r.strategy.name(), config.seed, &r.stats)).collect();
    report::annotate_savings(&mut reports, &baseline_name(config)).map_err(runtime)?;
    Ok(reports)
}

#[derive(Debug, Clone)]
pub struct ScenarioOutcome {
    pub reports: Vec<RunReport>,
    pub comparison: Vec<ComparisonRow>,
    pub files: Vec<PathBuf>,
}

pub fn csv_path(output_dir: &Path, scenario: &str, strategy: &str) -> PathBuf {
    output_dir.join(format!("{scenario}_{strategy}.csv"))
}

pub fn json_path(output_dir: &Path, scenario: &str) -> PathBuf {
    output_dir.join(format!("{scenario}.json"))
}

pub fn checks_json_path(output_dir: &Path, scenario: &str) -> PathBuf {
    output_dir.join(format!("{scenario}_checks.json"))
}

/// Runs all strategies, then writes `<name>_<strategy>.csv` per strategy and
/// `<name>.json`.
pub fn run_scenario(config: &ScenarioConfig, output_dir: &Path, parallel: bool) -> Result<ScenarioOutcome> {
    let runs = simulate(config, parallel)?;
    let reports = build_reports(config, &runs)?;
    let comparison = report::compare_strategies(&reports, &baseline_name(config)).map_err(runtime)?;
    std::fs::create_dir_all(output_dir).map_err(|e| runtime(format!("{}: {e}", output_dir.display())))?;
    let mut files = Vec::new();
    for r in &reports {
        let path = csv_path(output_dir, &config.name, &r.strategy);
        report::write_epoch_csv(r, &path).map_err(runtime)?;
        files.push(path);
    }
    let path = json_path(output_dir, &config.name);
    report::write_run_json(&reports, &[], &path).map_err(runtime)?;
    files.push(path);
    Ok(ScenarioOutcome { reports, comparison, files })
}

#[derive(Debug, Clone)]
pub struct CheckOutcome {
    pub checks: Vec<SgdCheckSummary>,
    pub file: PathBuf,
}

impl CheckOutcome {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(SgdCheckSummary::passed)
    }

    pub fn failed(&self) -> Vec<String> {
        self.checks.iter().filter(|c| !c.passed()).map(SgdCheckSummary::label).collect()
    }
}

/// Runs the checks configured in `[sgd_check]` without writing anything.
pub fn sgd_checks(config: &ScenarioConfig) -> Result<Vec<SgdCheckSummary>> {
    config.validate()?;
    let c = config.sgd_check.as_ref().ok_or_else(|| {
        RunError::Config(ConfigError::Validation {
            field: "sgd_check".into(),
            message: "this scenario has no [sgd_check] table".into(),
        })
    })?;
    let scenario = config.name.clone();
    let n = config.n_workers;
    let problem =
        ConvexProblem::quadratic(c.dimension, c.mu, c.sample_noise_scale, config.dataset_size as usize, c.problem_seed)
            .map_err(runtime)?;
    let x0 = vec![c.initial_value; c.dimension];
    let even = dbs::even_plan(n, config.total_budget, config.dataset_size, 0).map_err(runtime)?;
    let sgd_config = |step_size: f64, momentum: f64, n_iterations: usize| SgdConfig {
        step_size,
        momentum,
        n_iterations,
        aggregation: c.aggregation,
        seed: config.seed,
    };

    let mut out = Vec::new();
    for &gamma in &c.step_sizes {
        let cfg = sgd_config(gamma, c.momentum, c.n_iterations);
        let result = check_theorem1(&problem, &cfg, &even, &x0, c.seeds, config.seed).map_err(runtime)?;
        out.push(SgdCheckSummary::ConvergenceBound { scenario: scenario.clone(), result });
    }
    let result =
        check_lemma1(&problem, &x0, &c.m_values, c.variance_draws, config.seed, c.ratio_tolerance).map_err(runtime)?;
    out.push(SgdCheckSummary::VarianceMonotonicity { scenario: scenario.clone(), result });

    if let Some(e) = &c.equivalence {
        let strategy = config
            .strategy_configs()
            .into_iter()
            .find(|s| s.kind == StrategyKind::Dbs)
            .expect("validated: a dbs strategy exists");
        let stats = sim::run_training_with_jitter(
            &config.profiles(),
            &strategy,
            config.dataset_size,
            config.n_epochs,
            config.seed,
            config.timing_jitter,
        )
        .map_err(runtime)?;
        let plans: Vec<_> = stats.into_iter().map(|s| s.plan).collect();
        let problem = ConvexProblem::quadratic(
            e.dimension,
            c.mu,
            c.sample_noise_scale,
            config.dataset_size as usize,
            c.problem_seed,
        )
        .map_err(runtime)?;
        let x0 = vec![c.initial_value; e.dimension];
        let cfg = sgd_config(e.step_size, e.momentum, e.n_iterations);
        let result = check_equivalence(&problem, &cfg, &even, &plans, &x0, e.seeds, config.seed, e.relative_tolerance)
            .map_err(runtime)?;
        out.push(SgdCheckSummary::ScheduleEquivalence { scenario, result });
    }
    Ok(out)
}

/// Runs the configured checks and writes them to `<name>_checks.json`.
pub fn run_sgd_check(config: &ScenarioConfig, output_dir: &Path) -> Result<CheckOutcome> {
    let checks = sgd_checks(config)?;
    std::fs::create_dir_all(output_dir).map_err(|e| runtime(format!("{}: {e}", output_dir.display())))?;
    let file = checks_json_path(output_dir, &config.name);
    report::write_run_json(&[], &checks, &file).map_err(runtime)?;
    Ok(CheckOutcome { checks, file })
}
