//! Paired two-sided Wilcoxon signed-rank test.
//!
//! Zero differences are dropped and tied magnitudes share their average
//! rank. Up to [`EXACT_LIMIT`] non-zero differences the p-value comes from
//! the exact permutation distribution of the signed rank sum (conditional on
//! the observed ties); above that a normal approximation with tie and
//! continuity corrections is used.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{check_lengths, Result};

pub const EXACT_LIMIT: usize = 25;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignedRank {
    pub n_nonzero: usize,
    /// Sum of ranks of positive differences `a - b`.
    pub w_plus: f64,
    pub w_minus: f64,
    pub p_value: f64,
    pub exact: bool,
}

/// Average ranks (1-based) of `values`, ties sharing the mean position.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        // positions start+1 ..= end
        let avg = (start + 1 + end) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = avg;
        }
        start = end;
    }
    ranks
}

/// Number of sign assignments reaching each doubled positive-rank sum.
fn exact_counts(doubled: &[usize]) -> Vec<f64> {
    let total: usize = doubled.iter().sum();
    let mut counts = vec![0.0; total + 1];
    counts[0] = 1.0;
    let mut reach = 0;
    for &r in doubled {
        for s in (0..=reach).rev() {
            if counts[s] != 0.0 {
                counts[s + r] += counts[s];
            }
        }
        reach += r;
    }
    counts
}

pub fn wilcoxon_signed_rank(a: &[f64], b: &[f64]) -> Result<SignedRank> {
    check_lengths(a.len(), b.len())?;
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).filter(|d| *d != 0.0).collect();
    let n = diffs.len();
    if n == 0 {
        return Ok(SignedRank {
            n_nonzero: 0,
            w_plus: 0.0,
            w_minus: 0.0,
            p_value: 1.0,
            exact: true,
        });
    }
    let mags: Vec<f64> = diffs.iter().map(|d| d.abs()).collect();
    let ranks = average_ranks(&mags);
    let w_plus: f64 = diffs
        .iter()
        .zip(&ranks)
        .filter(|(d, _)| **d > 0.0)
        .map(|(_, r)| r)
        .sum();
    let total = (n * (n + 1)) as f64 / 2.0;
    let w_minus = total - w_plus;

    let (p, exact) = if n <= EXACT_LIMIT {
        let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
        let counts = exact_counts(&doubled);
        let all: f64 = counts.iter().sum();
        let obs = (2.0 * w_plus).round() as usize;
        let lower: f64 = counts[..=obs].iter().sum::<f64>() / all;
        let upper: f64 = counts[obs..].iter().sum::<f64>() / all;
        ((2.0 * lower.min(upper)).min(1.0), true)
    } else {
        let nf = n as f64;
        let mean = nf * (nf + 1.0) / 4.0;
        let mut tie_term = 0.0;
        let mut sorted = mags.clone();
        sorted.sort_by(f64::total_cmp);
        let mut i = 0;
        while i < sorted.len() {
            let mut j = i + 1;
            while j < sorted.len() && sorted[j] == sorted[i] {
                j += 1;
            }
            let t = (j - i) as f64;
            tie_term += t * t * t - t;
            i = j;
        }
        let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term / 48.0;
        if var <= 0.0 {
            (1.0, false)
        } else {
            let z = ((w_plus - mean).abs() - 0.5).max(0.0) / var.sqrt();
            let std_normal = Normal::standard();
            ((2.0 * std_normal.sf(z)).min(1.0), false)
        }
    };
    Ok(SignedRank {
        n_nonzero: n,
        w_plus,
        w_minus,
        p_value: p,
        exact,
    })
}

/// Two-sided paired p-value of `a` against `b`.
pub fn compare(a: &[f64], b: &[f64]) -> Result<f64> {
    Ok(wilcoxon_signed_rank(a, b)?.p_value)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Exhaustive sign enumeration: fraction of the 2^n assignments whose
    /// positive rank sum is at least as far from its mean as the observed one.
    fn enumerate_p(a: &[f64], b: &[f64]) -> f64 {
        let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).filter(|v| *v != 0.0).collect();
        let n = d.len();
        if n == 0 {
            return 1.0;
        }
        let ranks = average_ranks(&d.iter().map(|v| v.abs()).collect::<Vec<_>>());
        let mean = ranks.iter().sum::<f64>() / 2.0;
        let obs: f64 = (0..n).filter(|&i| d[i] > 0.0).map(|i| ranks[i]).sum();
        let mut hits = 0u64;
        for mask in 0u64..(1 << n) {
            let w: f64 = (0..n).filter(|&i| mask >> i & 1 == 1).map(|i| ranks[i]).sum();
            if (w - mean).abs() >= (obs - mean).abs() - 1e-9 {
                hits += 1;
            }
        }
        hits as f64 / (1u64 << n) as f64
    }

    #[test]
    fn ranks_average_ties() {
        assert_eq!(average_ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn identical_vectors() {
        let a = [0.3, 0.9, 1.0, 0.0, 0.5];
        let r = wilcoxon_signed_rank(&a, &a).unwrap();
        assert_eq!((r.p_value, r.n_nonzero), (1.0, 0));
        assert!(compare(&a, &a[..4]).is_err());
    }

    #[test]
    #[allow(clippy::approx_constant)]
    fn textbook_paired_example() {
        // Classic depression-scale pair; reference two-sided p = 0.039062.
        let x = [1.83, 0.50, 1.62, 2.48, 1.68, 1.88, 1.55, 3.06, 1.30];
        let y = [0.878, 0.647, 0.598, 2.05, 1.06, 1.29, 1.06, 3.14, 1.29];
        let r = wilcoxon_signed_rank(&x, &y).unwrap();
        assert_eq!(r.w_plus, 40.0);
        assert!((r.p_value - 0.039_062_5).abs() < 1e-12);
        assert!((r.p_value - enumerate_p(&x, &y)).abs() < 1e-12);
    }

    #[test]
    fn dominating_ten() {
        let a: Vec<f64> = (0..10).map(|i| 1.0 + i as f64).collect();
        let b = vec![0.0; 10];
        let p = compare(&a, &b).unwrap();
        assert!((p - 2.0 / 1024.0).abs() < 1e-15);
    }

    #[test]
    fn normal_branch_for_large_samples() {
        let a: Vec<f64> = (0..50).map(|i| (i % 7) as f64 * 0.1 + 0.05).collect();
        let b: Vec<f64> = (0..50).map(|i| (i % 5) as f64 * 0.1).collect();
        let r = wilcoxon_signed_rank(&a, &b).unwrap();
        assert!(!r.exact);
        assert!(r.p_value > 0.0 && r.p_value <= 1.0);
        let strong: Vec<f64> = (0..50).map(|i| 1.0 + i as f64).collect();
        assert!(compare(&strong, &vec![0.0; 50]).unwrap() < 1e-8);
    }

    proptest! {
        #[test]
        fn exact_matches_enumeration(
            pairs in prop::collection::vec((0u8..6, 0u8..6), 1..11)
        ) {
            // Coarse grid values force zero differences and tied magnitudes.
            let a: Vec<f64> = pairs.iter().map(|p| p.0 as f64 * 0.25).collect();
            let b: Vec<f64> = pairs.iter().map(|p| p.1 as f64 * 0.25).collect();
            let p = compare(&a, &b).unwrap();
            prop_assert!((p - enumerate_p(&a, &b)).abs() < 1e-12);
        }
    }
}
