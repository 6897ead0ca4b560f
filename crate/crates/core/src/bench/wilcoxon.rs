use statrs::function::erf::erfc;

use crate::error::{Error, Result};

/// Above this many nonzero differences the normal approximation is used.
const EXACT_LIMIT: usize = 25;

/// Two-sided p-value of the Wilcoxon signed-rank test on paired samples.
///
/// Zero differences are dropped and tied magnitudes get midranks. With at most
/// 25 nonzero differences the p-value comes from the exact permutation
/// distribution of the (midranked) statistic; otherwise from the normal
/// approximation with tie-corrected variance and a continuity correction.
pub fn wilcoxon_signed_rank(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Dimension(format!(
            "paired samples differ in length ({} vs {})",
            a.len(),
            b.len()
        )));
    }
    if a.len() < 5 {
        return Err(Error::InvalidArgument(format!(
            "signed-rank test needs at least 5 pairs, got {}",
            a.len()
        )));
    }
    let diffs: Vec<f64> = a
        .iter()
        .zip(b)
        .map(|(x, y)| x - y)
        .filter(|d| *d != 0.0)
        .collect();
    if diffs.iter().any(|d| !d.is_finite()) {
        return Err(Error::InvalidArgument("differences must be finite".into()));
    }
    if diffs.is_empty() {
        return Ok(1.0);
    }
    let ranks = midranks(&diffs.iter().map(|d| d.abs()).collect::<Vec<_>>());
    let w_plus: f64 = diffs
        .iter()
        .zip(&ranks)
        .filter(|(d, _)| **d > 0.0)
        .map(|(_, r)| r)
        .sum();
    let p = if diffs.len() <= EXACT_LIMIT {
        exact_p(&ranks, w_plus)
    } else {
        normal_p(&ranks, w_plus)
    };
    Ok(p.min(1.0))
}

/// Ranks of `values` (1-based), ties replaced by the mean of their ranks.
fn midranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        let rank = (start + end + 1) as f64 / 2.0;
        for &idx in &order[start..end] {
            ranks[idx] = rank;
        }
        start = end;
    }
    ranks
}

/// Counts sign assignments over doubled (integer) midranks.
fn exact_p(ranks: &[f64], w_plus: f64) -> f64 {
    let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
    let total: usize = doubled.iter().sum();
    let mut counts = vec![0.0f64; total + 1];
    counts[0] = 1.0;
    let mut reach = 0;
    for &r in &doubled {
        for s in (0..=reach).rev() {
            if counts[s] != 0.0 {
                counts[s + r] += counts[s];
            }
        }
        reach += r;
    }
    let all: f64 = counts.iter().sum();
    let w = (2.0 * w_plus).round() as usize;
    let lower: f64 = counts[..=w].iter().sum::<f64>() / all;
    let upper: f64 = counts[w..].iter().sum::<f64>() / all;
    2.0 * lower.min(upper)
}

fn normal_p(ranks: &[f64], w_plus: f64) -> f64 {
    let n = ranks.len() as f64;
    let mean = n * (n + 1.0) / 4.0;
    let mut tie_term = 0.0;
    let mut sorted = ranks.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut start = 0;
    while start < sorted.len() {
        let mut end = start + 1;
        while end < sorted.len() && sorted[end] == sorted[start] {
            end += 1;
        }
        let t = (end - start) as f64;
        tie_term += t * t * t - t;
        start = end;
    }
    let var = n * (n + 1.0) * (2.0 * n + 1.0) / 24.0 - tie_term / 48.0;
    if var <= 0.0 {
        return 1.0;
    }
    let z = ((w_plus - mean).abs() - 0.5).max(0.0) / var.sqrt();
    erfc(z / std::f64::consts::SQRT_2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Enumerates all 2^n sign flips of the midranks.
    fn brute_force_p(diffs: &[f64]) -> f64 {
        let nz: Vec<f64> = diffs.iter().cloned().filter(|d| *d != 0.0).collect();
        let ranks = midranks(&nz.iter().map(|d| d.abs()).collect::<Vec<_>>());
        let observed: f64 = nz
            .iter()
            .zip(&ranks)
            .filter(|(d, _)| **d > 0.0)
            .map(|(_, r)| r)
            .sum();
        let n = nz.len();
        let (mut le, mut ge) = (0u64, 0u64);
        for mask in 0u64..(1 << n) {
            let w: f64 = (0..n)
                .filter(|k| mask >> k & 1 == 1)
                .map(|k| ranks[k])
                .sum();
            if w <= observed + 1e-9 {
                le += 1;
            }
            if w >= observed - 1e-9 {
                ge += 1;
            }
        }
        let all = (1u64 << n) as f64;
        (2.0 * (le as f64 / all).min(ge as f64 / all)).min(1.0)
    }

    #[test]
    fn identical_samples_give_one() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(wilcoxon_signed_rank(&a, &a).unwrap(), 1.0);
    }

    #[test]
    fn all_positive_six() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let p = wilcoxon_signed_rank(&a, &[0.0; 6]).unwrap();
        assert!((p - 2.0 / 64.0).abs() < 1e-15);
    }

    #[test]
    fn matches_scipy_exact() {
        // scipy.stats.wilcoxon(a, method="exact")
        let a = [1.0, 2.5, -0.5, 3.0, 3.5, 4.0, -1.5, 2.0, 0.25, 1.25];
        let p = wilcoxon_signed_rank(&a, &[0.0; 10]).unwrap();
        assert!((p - 0.037109375).abs() < 1e-15);
    }

    #[test]
    fn matches_scipy_normal_approximation() {
        // scipy.stats.wilcoxon(a, zero_method="wilcox", correction=True, method="approx")
        let a: Vec<f64> = (0..30)
            .map(|i| 0.5 * ((i * 37) % 23) as f64 - 3.5)
            .collect();
        let p = wilcoxon_signed_rank(&a, &[0.0; 30]).unwrap();
        assert!((p - 0.011699096238811744).abs() < 1e-12, "{p}");
    }

    #[test]
    fn rejects_short_or_unequal_input() {
        assert!(wilcoxon_signed_rank(&[1.0; 4], &[0.0; 4]).is_err());
        assert!(wilcoxon_signed_rank(&[1.0; 6], &[0.0; 5]).is_err());
    }

    #[test]
    fn midranks_average_ties() {
        assert_eq!(midranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    proptest! {
        #[test]
        fn exact_matches_enumeration(diffs in proptest::collection::vec(-4i32..=4, 5..14)) {
            let a: Vec<f64> = diffs.iter().map(|&d| d as f64).collect();
            let p = wilcoxon_signed_rank(&a, &vec![0.0; a.len()]).unwrap();
            if a.iter().all(|d| *d == 0.0) {
                prop_assert_eq!(p, 1.0);
            } else {
                prop_assert!((p - brute_force_p(&a)).abs() < 1e-12);
            }
        }
    }
}
