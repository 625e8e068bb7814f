//! Builtin desk-scale scenarios shaped after the published experiments.

use crate::config::{EquivalenceConfig, ScenarioConfig, SgdCheckConfig, StrategyEntry, WorkerDisturbance};
use crate::sgd::Aggregation;
use crate::sim::{DisturbanceEvent, StrategyKind};

pub struct Builtin {
    pub name: &'static str,
    pub description: &'static str,
    build: fn() -> ScenarioConfig,
}

impl Builtin {
    pub fn config(&self) -> ScenarioConfig {
        ScenarioConfig { description: self.description.to_string(), ..(self.build)() }
    }
}

pub const BUILTINS: &[Builtin] = &[
    Builtin {
        name: "scale4",
        description: "4 workers: whole and GPU time per epoch, fixed S-SGD vs DBS on a 1:2 cost spread",
        build: || scale("scale4", 4),
    },
    Builtin {
        name: "scale8",
        description: "8 workers: same spread and budget as scale4, more synchronization cost",
        build: || scale("scale8", 8),
    },
    Builtin {
        name: "scale16",
        description: "16 workers: the savings shrink further as the cluster grows",
        build: || scale("scale16", 16),
    },
    Builtin {
        name: "robustness",
        description: "scale4 with +10 s per epoch from epochs 10, 21 and 31 on workers 0, 1 and 2",
        build: robustness,
    },
    Builtin { name: "homogeneous", description: "identical workers: DBS keeps the even plan", build: homogeneous },
    Builtin {
        name: "model_averaging",
        description: "model averaging with step 8 under the robustness disturbances",
        build: model_averaging,
    },
    Builtin { name: "one_shot", description: "one-shot averaging under the robustness disturbances", build: one_shot },
    Builtin {
        name: "sgd_convergence",
        description: "fixed vs DBS batch schedules converge alike; convergence bound and batch-noise checks",
        build: sgd_convergence,
    },
];

pub fn builtin(name: &str) -> Option<ScenarioConfig> {
    BUILTINS.iter().find(|b| b.name == name).map(Builtin::config)
}

/// `n` costs spread geometrically from `fastest` to `slowest` seconds per sample.
pub fn geometric_costs(n: usize, fastest: f64, slowest: f64) -> Vec<f64> {
    if n == 1 {
        return vec![fastest];
    }
    let ratio = slowest / fastest;
    (0..n).map(|i| fastest * ratio.powf(i as f64 / (n - 1) as f64)).collect()
}

fn fixed_and_dbs() -> Vec<StrategyEntry> {
    vec![StrategyEntry::new(StrategyKind::FixedSsgd), StrategyEntry::new(StrategyKind::Dbs)]
}

fn scale(name: &str, n: usize) -> ScenarioConfig {
    ScenarioConfig {
        name: name.to_string(),
        description: String::new(),
        n_workers: n,
        worker_costs: geometric_costs(n, 0.0032, 0.0064),
        per_iteration_overhead: Vec::new(),
        disturbances: Vec::new(),
        dataset_size: 50_000,
        total_budget: 512,
        n_epochs: 50,
        strategies: fixed_and_dbs(),
        seed: 0,
        timing_jitter: 0.0,
        sgd_check: None,
    }
}

fn robustness_disturbances() -> Vec<WorkerDisturbance> {
    [(0, 10), (1, 21), (2, 31)]
        .into_iter()
        .map(|(worker, start)| WorkerDisturbance { worker, event: DisturbanceEvent::extra_seconds(start, 10.0) })
        .collect()
}

fn robustness() -> ScenarioConfig {
    ScenarioConfig { disturbances: robustness_disturbances(), ..scale("robustness", 4) }
}

fn homogeneous() -> ScenarioConfig {
    ScenarioConfig { worker_costs: vec![0.004; 4], ..scale("homogeneous", 4) }
}

fn model_averaging() -> ScenarioConfig {
    let strategies = vec![
        StrategyEntry::new(StrategyKind::FixedSsgd),
        StrategyEntry::new(StrategyKind::ModelAveraging).with_interval(8),
        StrategyEntry::new(StrategyKind::Dbs),
    ];
    ScenarioConfig { name: "model_averaging".into(), strategies, ..robustness() }
}

fn one_shot() -> ScenarioConfig {
    let strategies = vec![
        StrategyEntry::new(StrategyKind::FixedSsgd),
        StrategyEntry::new(StrategyKind::OneShot),
        StrategyEntry::new(StrategyKind::Dbs),
    ];
    ScenarioConfig { name: "one_shot".into(), strategies, ..robustness() }
}

fn sgd_convergence() -> ScenarioConfig {
    ScenarioConfig {
        name: "sgd_convergence".into(),
        description: String::new(),
        n_workers: 4,
        worker_costs: geometric_costs(4, 0.001, 0.002),
        per_iteration_overhead: Vec::new(),
        disturbances: Vec::new(),
        dataset_size: 4096,
        total_budget: 64,
        n_epochs: 10,
        strategies: fixed_and_dbs(),
        seed: 0,
        timing_jitter: 0.0,
        sgd_check: Some(SgdCheckConfig {
            dimension: 16,
            mu: 1.0,
            sample_noise_scale: 1.0,
            problem_seed: 11,
            initial_value: 1.0,
            step_sizes: vec![0.1, 0.5, 0.9],
            momentum: 0.0,
            n_iterations: 200,
            aggregation: Aggregation::BatchWeighted,
            seeds: 1000,
            m_values: vec![1, 4, 16, 64],
            variance_draws: 100_000,
            ratio_tolerance: 0.1,
            equivalence: Some(EquivalenceConfig {
                dimension: 512,
                step_size: 0.1,
                momentum: 0.5,
                n_iterations: 200,
                seeds: 100,
                relative_tolerance: 0.02,
            }),
        }),
    }
}
