//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any failed.

mod support;

use std::path::Path;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use dbsim::config::ScenarioConfig;
use dbsim::dbs::{self, ExactFraction, PerfEstimate};
use dbsim::runner;
use dbsim::scenarios::{builtin, BUILTINS};
use dbsim::sgd::checks::{check_equivalence, check_lemma1, check_theorem1};
use dbsim::sgd::{ConvexProblem, SgdConfig};
use dbsim::sim::{cumulative_times, EpochStats, StrategyKind};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn run_strategies(name: &str) -> Result<(ScenarioConfig, Vec<runner::StrategyRun>), String> {
    let config = builtin(name).ok_or_else(|| format!("missing builtin {name}"))?;
    let runs = runner::simulate(&config, false).map_err(|e| e.to_string())?;
    Ok((config, runs))
}

fn stats_of(runs: &[runner::StrategyRun], kind: StrategyKind) -> Result<&[EpochStats], String> {
    runs.iter().find(|r| r.strategy.kind == kind).map(|r| r.stats.as_slice()).ok_or_else(|| format!("no {kind} run"))
}

fn total_ta(stats: &[EpochStats]) -> Result<f64, String> {
    cumulative_times(stats).map(|c| c.total_ta).map_err(|e| e.to_string())
}

fn worked_example_exactness() -> Outcome {
    let batches = dbs::round_twice(&[13.7, 16.5, 19.6, 14.2], 64).map_err(|e| e.to_string())?;
    ensure(batches == [14, 16, 20, 14], || format!("round_twice gave {batches:?}"))?;
    let ranges = dbs::partition_ranges(&batches).map_err(|e| e.to_string())?;
    for (r, &b) in ranges.iter().zip(&batches) {
        ensure(r.width().same_value(&ExactFraction::new(b, 64)), || format!("width {:?} != {b}/64", r.width()))?;
    }
    let printed: Vec<String> = ranges.iter().map(|r| format!("{:.2}", r.width().as_f64())).collect();
    ensure(printed == ["0.22", "0.25", "0.31", "0.22"], || format!("two-decimal widths {printed:?}"))?;
    Ok(format!("batches {batches:?}, widths {printed:?}"))
}

fn rounding_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    for case in 0..1000 {
        let n = rng.random_range(2..=6usize);
        let budget = rng.random_range(8..=64u64);
        let perfs: Vec<PerfEstimate> =
            (0..n).map(|worker_id| PerfEstimate { worker_id, value: rng.random_range(0.05..5.0) }).collect();
        let fractions = dbs::compute_batch_fractions(&perfs).map_err(|e| e.to_string())?;
        let real = dbs::scale_to_real_batches(&fractions, budget).map_err(|e| e.to_string())?;
        let got = dbs::round_twice(&real, budget).map_err(|e| e.to_string())?;
        let want = support::brute_force_round(&real, budget);
        ensure(got == want, || format!("case {case}: {real:?} B={budget}: got {got:?}, oracle {want:?}"))?;
    }
    Ok("1000 instances match the exhaustive minimizer".into())
}

fn load_balance() -> Outcome {
    let (_, runs) = run_strategies("scale4")?;
    let dbs = stats_of(&runs, StrategyKind::Dbs)?;
    let worst = dbs.iter().filter(|s| s.epoch >= 5).map(EpochStats::imbalance_ratio).fold(0.0, f64::max);
    ensure(worst <= 1.05, || format!("max/min t_gpu reached {worst:.4} after epoch 5"))?;
    Ok(format!("worst max/min t_gpu from epoch 5: {worst:.4}"))
}

fn savings_ordering() -> Outcome {
    let mut savings = Vec::new();
    for name in ["scale4", "scale8", "scale16"] {
        let (_, runs) = run_strategies(name)?;
        let fixed = total_ta(stats_of(&runs, StrategyKind::FixedSsgd)?)?;
        let dbs = total_ta(stats_of(&runs, StrategyKind::Dbs)?)?;
        ensure(dbs < fixed, || format!("{name}: dbs {dbs} not below fixed {fixed}"))?;
        savings.push(dbsim::report::savings_percent(dbs, fixed).map_err(|e| e.to_string())?);
    }
    ensure(savings[0] >= savings[1] && savings[1] >= savings[2], || format!("savings not ordered: {savings:?}"))?;
    Ok(format!("savings % (n=4, 8, 16): {:.2}, {:.2}, {:.2}", savings[0], savings[1], savings[2]))
}

fn robustness_recovery() -> Outcome {
    let (config, runs) = run_strategies("robustness")?;
    let dbs = stats_of(&runs, StrategyKind::Dbs)?;
    let fixed = stats_of(&runs, StrategyKind::FixedSsgd)?;
    let mut starts: Vec<usize> = config.disturbances.iter().map(|d| d.event.start_epoch).collect();
    starts.sort_unstable();
    ensure(starts == [10, 21, 31], || format!("unexpected disturbance epochs {starts:?}"))?;
    let mut worst = 0.0f64;
    for (k, &d) in starts.iter().enumerate() {
        let until = starts.get(k + 1).copied().unwrap_or(config.n_epochs);
        for s in &dbs[d + 2..until] {
            worst = worst.max(s.imbalance_ratio());
            ensure(s.imbalance_ratio() <= 1.05, || {
                format!("epoch {} after disturbance at {d}: ratio {:.4}", s.epoch, s.imbalance_ratio())
            })?;
        }
    }
    let fixed40 = total_ta(&fixed[..=40])?;
    let dbs40 = total_ta(&dbs[..=40])?;
    let excess = 100.0 * (fixed40 - dbs40) / dbs40;
    ensure(excess >= 15.0, || format!("fixed exceeds dbs by only {excess:.2}% at epoch 40"))?;
    Ok(format!("worst ratio 2+ epochs after a disturbance {worst:.4}; fixed exceeds dbs by {excess:.2}% at epoch 40"))
}

struct SgdSetup {
    config: ScenarioConfig,
    even: dbs::PartitionPlan,
}

fn sgd_setup() -> Result<SgdSetup, String> {
    let config = builtin("sgd_convergence").ok_or("missing sgd_convergence")?;
    let even =
        dbs::even_plan(config.n_workers, config.total_budget, config.dataset_size, 0).map_err(|e| e.to_string())?;
    Ok(SgdSetup { config, even })
}

fn quadratic(setup: &SgdSetup, dimension: usize) -> Result<ConvexProblem, String> {
    let c = setup.config.sgd_check.as_ref().ok_or("no sgd_check")?;
    ConvexProblem::quadratic(dimension, c.mu, c.sample_noise_scale, setup.config.dataset_size as usize, c.problem_seed)
        .map_err(|e| e.to_string())
}

fn convergence_bound() -> Outcome {
    let setup = sgd_setup()?;
    let c = setup.config.sgd_check.clone().ok_or("no sgd_check")?;
    let problem = quadratic(&setup, c.dimension)?;
    let x0 = vec![c.initial_value; c.dimension];
    let mut margins = Vec::new();
    for gamma_mu in [0.1, 0.5, 0.9] {
        let cfg = SgdConfig { momentum: 0.0, ..SgdConfig::new(gamma_mu / c.mu, 200, 0) };
        let r = check_theorem1(&problem, &cfg, &setup.even, &x0, 1000, 0).map_err(|e| e.to_string())?;
        ensure(r.passed, || {
            format!("gamma*mu={gamma_mu}: mean above bound + 3 SE by {:.4} at j={}", -r.worst_slack, r.worst_iteration)
        })?;
        margins.push(format!("{gamma_mu}: {:.3}", r.worst_slack));
    }
    Ok(format!("worst slack per gamma*mu {{{}}}", margins.join(", ")))
}

fn variance_monotonicity() -> Outcome {
    let setup = sgd_setup()?;
    let c = setup.config.sgd_check.clone().ok_or("no sgd_check")?;
    let problem = quadratic(&setup, c.dimension)?;
    let x0 = vec![c.initial_value; c.dimension];
    let r = check_lemma1(&problem, &x0, &[1, 4, 16, 64], 100_000, 0, 0.1).map_err(|e| e.to_string())?;
    ensure(r.non_increasing, || format!("variance increased: {:?}", r.estimates))?;
    ensure(r.ratio_ok, || format!("m -> 4m ratios outside 4 +- 10%: {:?}", r.ratios))?;
    let ratios: Vec<String> = r.ratios.iter().map(|v| format!("{v:.3}")).collect();
    Ok(format!("m -> 4m variance ratios [{}]", ratios.join(", ")))
}

fn schedule_equivalence() -> Outcome {
    let setup = sgd_setup()?;
    let c = setup.config.sgd_check.clone().ok_or("no sgd_check")?;
    let e = c.equivalence.clone().ok_or("no equivalence block")?;
    let (_, runs) = run_strategies("sgd_convergence")?;
    let plans: Vec<_> = stats_of(&runs, StrategyKind::Dbs)?.iter().map(|s| s.plan.clone()).collect();
    ensure(plans.iter().all(|p| p.batch_sum() == setup.even.batch_sum()), || "dbs plans change the budget".into())?;
    ensure(plans.iter().any(|p| !p.same_partition(&setup.even)), || "dbs never left the even plan".into())?;
    let problem = quadratic(&setup, e.dimension)?;
    let x0 = vec![c.initial_value; e.dimension];
    let cfg = SgdConfig { momentum: e.momentum, ..SgdConfig::new(e.step_size, e.n_iterations, 0) };
    let r = check_equivalence(&problem, &cfg, &setup.even, &plans, &x0, 100, 0, 0.02).map_err(|e| e.to_string())?;
    let summary = format!(
        "final gap fixed {:.5} vs dbs {:.5} (relative {:.4}), max per-iteration z {:.3}",
        r.fixed_final_loss, r.dbs_final_loss, r.relative_difference, r.max_z
    );
    ensure(r.relative_difference <= 0.02, || format!("relative difference too large: {summary}"))?;
    ensure(r.max_z <= 3.0, || format!("trajectory means disagree: {summary}"))?;
    Ok(summary)
}

fn dir_bytes(dir: &Path) -> Result<Vec<(String, Vec<u8>)>, String> {
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .map_err(|e| e.to_string())?
        .map(|entry| {
            let path = entry.map_err(|e| e.to_string())?.path();
            let bytes = std::fs::read(&path).map_err(|e| e.to_string())?;
            Ok((path.file_name().unwrap().to_string_lossy().into_owned(), bytes))
        })
        .collect::<Result<_, String>>()?;
    files.sort();
    Ok(files)
}

fn determinism() -> Outcome {
    let mut compared = 0;
    for b in BUILTINS {
        let config = b.config();
        let dirs = [tempfile::tempdir().map_err(|e| e.to_string())?, tempfile::tempdir().map_err(|e| e.to_string())?];
        for d in &dirs {
            runner::run_scenario(&config, d.path(), false).map_err(|e| e.to_string())?;
            if config.sgd_check.is_some() {
                runner::run_sgd_check(&config, d.path()).map_err(|e| e.to_string())?;
            }
        }
        let (a, b2) = (dir_bytes(dirs[0].path())?, dir_bytes(dirs[1].path())?);
        ensure(a == b2, || format!("{}: outputs differ between runs", b.name))?;
        compared += a.len();
    }
    Ok(format!("{compared} files byte-identical across two runs of {} builtins", BUILTINS.len()))
}

fn homogeneous_fixed_point() -> Outcome {
    let (config, runs) = run_strategies("homogeneous")?;
    let dbs = stats_of(&runs, StrategyKind::Dbs)?;
    let fixed = stats_of(&runs, StrategyKind::FixedSsgd)?;
    let even =
        dbs::even_plan(config.n_workers, config.total_budget, config.dataset_size, 0).map_err(|e| e.to_string())?;
    for s in dbs {
        ensure(s.plan.int_batches == even.int_batches && s.plan.sample_spans == even.sample_spans, || {
            format!("epoch {} left the even plan: {:?}", s.epoch, s.plan.int_batches)
        })?;
    }
    let (d, f) = (total_ta(dbs)?, total_ta(fixed)?);
    let rel = (d - f).abs() / f;
    ensure(rel <= 0.001, || format!("totals differ by {:.4}%", 100.0 * rel))?;
    Ok(format!("even plan every epoch; totals differ by {:.4}%", 100.0 * rel))
}

struct Criterion {
    id: u32,
    name: &'static str,
    limit: Option<Duration>,
    run: fn() -> Outcome,
}

fn main() {
    let secs = Duration::from_secs;
    let criteria = [
        Criterion {
            id: 1,
            name: "worked rounding example",
            limit: Some(Duration::from_millis(1)),
            run: worked_example_exactness,
        },
        Criterion { id: 2, name: "rounding oracle equivalence", limit: Some(secs(5)), run: rounding_oracle },
        Criterion { id: 3, name: "load-balance convergence", limit: Some(secs(10)), run: load_balance },
        Criterion { id: 4, name: "savings positivity and ordering", limit: Some(secs(60)), run: savings_ordering },
        Criterion { id: 5, name: "robustness recovery", limit: Some(secs(15)), run: robustness_recovery },
        Criterion { id: 6, name: "convergence bound", limit: Some(secs(30)), run: convergence_bound },
        Criterion { id: 7, name: "batch-noise monotonicity", limit: Some(secs(10)), run: variance_monotonicity },
        Criterion {
            id: 8,
            name: "dbs/fixed convergence equivalence",
            limit: Some(secs(60)),
            run: schedule_equivalence,
        },
        Criterion { id: 9, name: "output determinism", limit: None, run: determinism },
        Criterion { id: 10, name: "homogeneous fixed point", limit: None, run: homogeneous_fixed_point },
    ];
    let mut failed = 0;
    for c in &criteria {
        let start = Instant::now();
        let outcome = (c.run)();
        let elapsed = start.elapsed();
        let outcome = match (outcome, c.limit) {
            (Ok(_), Some(limit)) if elapsed > limit => Err(format!("took {elapsed:?}, limit {limit:?}")),
            (o, _) => o,
        };
        match outcome {
            Ok(detail) => println!("criterion {:>2} PASS  {} ({elapsed:.2?}): {detail}", c.id, c.name),
            Err(why) => {
                failed += 1;
                println!("criterion {:>2} FAIL  {} ({elapsed:.2?}): {why}", c.id, c.name);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
