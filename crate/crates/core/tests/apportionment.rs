mod support;

use dbsim::dbs::{self, PerfEstimate};
use proptest::prelude::*;
use support::{brute_force_round, quarter_grid};

fn perfs(values: &[f64]) -> Vec<PerfEstimate> {
    values.iter().enumerate().map(|(worker_id, &value)| PerfEstimate { worker_id, value }).collect()
}

fn real_batches(weights: &[f64], budget: u64) -> Vec<f64> {
    let fractions = dbs::compute_batch_fractions(&perfs(weights)).unwrap();
    dbs::scale_to_real_batches(&fractions, budget).unwrap()
}

#[test]
fn oracle_reproduces_known_cases() {
    assert_eq!(brute_force_round(&[13.7, 16.5, 19.6, 14.2], 64), vec![14, 16, 20, 14]);
    assert_eq!(brute_force_round(&[5.4, 5.3, 5.3], 16), vec![5, 5, 5]);
    assert_eq!(brute_force_round(&[8.0; 4], 32), vec![8; 4]);
    assert_eq!(brute_force_round(&[2.5, 2.5, 3.0], 8), vec![3, 2, 3]);
}

proptest! {
    #[test]
    fn rounding_respects_budget(weights in prop::collection::vec(0.01f64..100.0, 1..12), budget in 12u64..5000) {
        let real = real_batches(&weights, budget);
        let rounded = dbs::round_twice(&real, budget).unwrap();
        prop_assert!(rounded.iter().sum::<u64>() <= budget);
        for (r, b) in rounded.iter().zip(&real) {
            prop_assert!((*r as f64 - b).abs() < 1.0);
        }
    }

    #[test]
    fn rounding_matches_oracle(weights in prop::collection::vec(0.01f64..10.0, 2..=6), budget in 8u64..=64) {
        let real = real_batches(&weights, budget);
        prop_assert_eq!(dbs::round_twice(&real, budget).unwrap(), brute_force_round(&real, budget));
    }

    #[test]
    fn rounding_matches_oracle_with_exact_ties(weights in prop::collection::vec(0u64..8, 2..=6), budget in 8u64..=64) {
        let real = quarter_grid(&weights, budget);
        prop_assert_eq!(dbs::round_twice(&real, budget).unwrap(), brute_force_round(&real, budget));
    }

    #[test]
    fn fractions_are_scale_invariant(weights in prop::collection::vec(0.001f64..1000.0, 1..10), c in 1e-3f64..1e3) {
        let base = dbs::compute_batch_fractions(&perfs(&weights)).unwrap();
        let scaled: Vec<f64> = weights.iter().map(|w| w * c).collect();
        let scaled = dbs::compute_batch_fractions(&perfs(&scaled)).unwrap();
        for (a, b) in base.iter().zip(&scaled) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
        prop_assert!((base.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
    }

    #[test]
    fn spans_tile_the_dataset(batches in prop::collection::vec(0u64..50, 1..10), extra in 0u64..100_000) {
        prop_assume!(batches.iter().any(|b| *b > 0));
        let dataset_size = batches.len() as u64 + extra;
        let ranges = dbs::partition_ranges(&batches).unwrap();
        let spans = dbs::spans_from_ranges(&ranges, dataset_size).unwrap();
        prop_assert_eq!(spans[0].start, 0);
        prop_assert_eq!(spans.last().unwrap().end, dataset_size);
        for pair in spans.windows(2) {
            prop_assert_eq!(pair[0].end, pair[1].start);
        }
        prop_assert_eq!(spans.iter().map(|s| s.len()).sum::<u64>(), dataset_size);
        for (s, b) in spans.iter().zip(&batches) {
            if *b > 0 {
                prop_assert!(!s.is_empty());
            }
        }
        let total: u64 = batches.iter().sum();
        for (r, b) in ranges.iter().zip(&batches) {
            prop_assert_eq!(r.width().num, *b);
            prop_assert_eq!(r.width().den, total);
        }
    }

    #[test]
    fn identical_performance_is_a_fixed_point(n in 1usize..12, budget_per_worker in 1u64..100, perf in 1e-4f64..10.0) {
        let budget = budget_per_worker * n as u64 + (n as u64 / 2);
        let dataset_size = budget * 50;
        let even = dbs::even_plan(n, budget, dataset_size, 0).unwrap();
        let mut plan = even.clone();
        for epoch in 1..5 {
            let times: Vec<f64> = plan.shares().iter().map(|s| s / perf).collect();
            plan = dbs::plan_next_epoch(&plan.shares(), &times, budget, dataset_size, epoch).unwrap();
            prop_assert!(plan.same_partition(&even));
        }
    }

    #[test]
    fn faster_worker_never_loses_batch(weights in prop::collection::vec(0.01f64..10.0, 2..8), which in 0usize..8, boost in 1.0f64..5.0) {
        let i = which % weights.len();
        let before = real_batches(&weights, 256);
        let mut raised = weights.clone();
        raised[i] *= boost;
        let after = real_batches(&raised, 256);
        prop_assert!(after[i] >= before[i] - 1e-9);
    }
}
