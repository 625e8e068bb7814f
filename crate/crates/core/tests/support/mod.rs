//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

/// Exhaustive minimizer of `sum((B'_i - B_i)^2)` over `B'_i in {floor, floor+1}`
/// subject to `sum(B') <= budget` and "only decimals >= 0.5 may round up".
///
/// Ties in squared error prefer more round-ups, then the lexicographically
/// smallest set of rounded-up indices.
pub fn brute_force_round(real: &[f64], budget: u64) -> Vec<u64> {
    let n = real.len();
    assert!(n <= 16, "oracle is exponential in n");
    let floors: Vec<u64> = real.iter().map(|b| b.floor() as u64).collect();
    let mut best: Option<(f64, Vec<usize>, Vec<u64>)> = None;
    for mask in 0u32..(1 << n) {
        let ups: Vec<usize> = (0..n).filter(|i| mask & (1 << i) != 0).collect();
        if ups.iter().any(|&i| real[i] - real[i].floor() < 0.5) {
            continue;
        }
        let candidate: Vec<u64> = (0..n).map(|i| floors[i] + u64::from(mask & (1 << i) != 0)).collect();
        if candidate.iter().sum::<u64>() > budget {
            continue;
        }
        let err: f64 = candidate.iter().zip(real).map(|(&c, &r)| (c as f64 - r).powi(2)).sum();
        let better = match &best {
            None => true,
            Some((best_err, best_ups, _)) => {
                err < *best_err
                    || (err == *best_err
                        && (ups.len() > best_ups.len() || (ups.len() == best_ups.len() && ups < *best_ups)))
            }
        };
        if better {
            best = Some((err, ups, candidate));
        }
    }
    best.expect("all-floor vector is always feasible").2
}

/// Reals on a quarter grid summing to `budget`: decimals are exact and ties
/// are frequent.
pub fn quarter_grid(weights: &[u64], budget: u64) -> Vec<f64> {
    let quarters = 4 * budget;
    let total: u64 = weights.iter().sum::<u64>().max(1);
    let mut parts: Vec<u64> = weights.iter().map(|w| w * quarters / total).collect();
    let assigned: u64 = parts.iter().sum();
    parts[0] += quarters - assigned;
    parts.iter().map(|&q| q as f64 / 4.0).collect()
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Standard error of the mean.
pub fn std_error(values: &[f64]) -> f64 {
    let m = mean(values);
    let var = values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (values.len() as f64 - 1.0);
    (var / values.len() as f64).sqrt()
}
