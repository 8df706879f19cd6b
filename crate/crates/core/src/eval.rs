//! Accuracy metrics, repetition statistics, and the paired Wilcoxon
//! signed-rank comparison between methods.

use crate::error::{Error, Result};

/// k x k confusion counts: rows = reference class, columns = prediction.
/// Class ids are mapped to 0-based indices by the caller-visible
/// `classes` list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub classes: Vec<u16>,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(classes: Vec<u16>) -> Self {
        let k = classes.len();
        ConfusionMatrix {
            classes,
            counts: vec![vec![0; k]; k],
        }
    }

    pub fn from_counts(classes: Vec<u16>, counts: Vec<Vec<u64>>) -> Self {
        ConfusionMatrix { classes, counts }
    }

    pub fn record(&mut self, reference: u16, prediction: u16) {
        let r = self.index_of(reference);
        let p = self.index_of(prediction);
        if let (Some(r), Some(p)) = (r, p) {
            self.counts[r][p] += 1;
        }
    }

    fn index_of(&self, class: u16) -> Option<usize> {
        self.classes.iter().position(|&c| c == class)
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().map(|row| row.iter().sum::<u64>()).sum()
    }
}

/// Per-class accuracies plus overall accuracy, average accuracy, and
/// Cohen's kappa.
#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    /// Diagonal / row total per class; NaN when the reference class is
    /// empty (reported and excluded from AA).
    pub per_class: Vec<f64>,
    pub oa: f64,
    pub aa: f64,
    pub kappa: f64,
    /// Classes with no reference pixels, excluded from AA.
    pub empty_classes: Vec<u16>,
}

pub fn metrics(cm: &ConfusionMatrix) -> Result<Metrics> {
    let k = cm.classes.len();
    let total = cm.total();
    if total == 0 {
        return Err(Error::EmptyInput("confusion matrix"));
    }
    let totalf = total as f64;
    let row_totals: Vec<u64> = cm.counts.iter().map(|r| r.iter().sum()).collect();
    let col_totals: Vec<u64> = (0..k)
        .map(|c| cm.counts.iter().map(|r| r[c]).sum())
        .collect();

    let mut per_class = Vec::with_capacity(k);
    let mut empty_classes = Vec::new();
    let mut aa_sum = 0.0;
    let mut aa_n = 0usize;
    for (c, &row_total) in row_totals.iter().enumerate() {
        if row_total == 0 {
            per_class.push(f64::NAN);
            empty_classes.push(cm.classes[c]);
        } else {
            let acc = cm.counts[c][c] as f64 / row_total as f64;
            per_class.push(acc);
            aa_sum += acc;
            aa_n += 1;
        }
    }

    let trace: u64 = (0..k).map(|c| cm.counts[c][c]).sum();
    let oa = trace as f64 / totalf;
    let aa = if aa_n > 0 {
        aa_sum / aa_n as f64
    } else {
        f64::NAN
    };
    let pe: f64 = (0..k)
        .map(|c| row_totals[c] as f64 * col_totals[c] as f64 / (totalf * totalf))
        .sum();
    let kappa = if (1.0 - pe).abs() < 1e-300 {
        1.0
    } else {
        (oa - pe) / (1.0 - pe)
    };
    Ok(Metrics {
        per_class,
        oa,
        aa,
        kappa,
        empty_classes,
    })
}

/// Mean and sample standard deviation per metric over repeated runs.
#[derive(Debug, Clone, PartialEq)]
pub struct RepetitionStats {
    pub mean: f64,
    pub std: f64,
}

pub fn repetition_stats(runs: &[f64]) -> Result<RepetitionStats> {
    if runs.len() < 2 {
        return Err(Error::EmptyInput(
            "need at least 2 runs for a standard deviation",
        ));
    }
    let n = runs.len() as f64;
    let mean = runs.iter().sum::<f64>() / n;
    let var = runs.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / (n - 1.0);
    Ok(RepetitionStats {
        mean,
        std: var.sqrt(),
    })
}

/// Result of the paired signed-rank comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct WilcoxonResult {
    pub significant: bool,
    pub p_value: f64,
    /// Signed-rank statistic (sum of ranks of positive differences).
    pub w_plus: f64,
    /// Non-zero paired differences used.
    pub n_used: usize,
}

/// Two-sided Wilcoxon signed-rank test on paired runs.
///
/// Zero differences are dropped; tied magnitudes get average ranks. The
/// null distribution is enumerated exactly for n <= 12 (conditionally on
/// the observed ranks) and approximated by a normal with continuity
/// correction above.
pub fn wilcoxon_compare(runs_a: &[f64], runs_b: &[f64], alpha: f64) -> Result<WilcoxonResult> {
    if runs_a.len() != runs_b.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} vs {} runs",
            runs_a.len(),
            runs_b.len()
        )));
    }
    if runs_a.len() < 5 {
        return Err(Error::EmptyInput("need at least 5 paired runs"));
    }
    let diffs: Vec<f64> = runs_a
        .iter()
        .zip(runs_b)
        .map(|(a, b)| a - b)
        .filter(|d| *d != 0.0)
        .collect();
    let n = diffs.len();
    if n == 0 {
        return Ok(WilcoxonResult {
            significant: false,
            p_value: 1.0,
            w_plus: 0.0,
            n_used: 0,
        });
    }

    let ranks = average_ranks(&diffs.iter().map(|d| d.abs()).collect::<Vec<f64>>());
    let w_plus: f64 = diffs
        .iter()
        .zip(&ranks)
        .filter(|(d, _)| **d > 0.0)
        .map(|(_, r)| *r)
        .sum();

    let p_value = if n <= 12 {
        exact_two_sided_p(&ranks, w_plus)
    } else {
        normal_two_sided_p(&ranks, w_plus, n)
    };
    Ok(WilcoxonResult {
        significant: p_value <= alpha,
        p_value,
        w_plus,
        n_used: n,
    })
}

/// Ranks of values ascending, averaging ties.
fn average_ranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0f64; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j < n && values[order[j]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + 1 + j) as f64 / 2.0;
        for &idx in &order[i..j] {
            ranks[idx] = avg;
        }
        i = j;
    }
    ranks
}

/// Exact enumeration of all sign assignments over the observed ranks.
fn exact_two_sided_p(ranks: &[f64], w_obs: f64) -> f64 {
    let n = ranks.len();
    let total = 1u64 << n;
    let mut at_least = 0u64;
    let mut at_most = 0u64;
    let eps = 1e-9;
    for mask in 0..total {
        let mut w = 0.0;
        for (bit, r) in ranks.iter().enumerate() {
            if mask >> bit & 1 == 1 {
                w += r;
            }
        }
        if w >= w_obs - eps {
            at_least += 1;
        }
        if w <= w_obs + eps {
            at_most += 1;
        }
    }
    let p_hi = at_least as f64 / total as f64;
    let p_lo = at_most as f64 / total as f64;
    (2.0 * p_hi.min(p_lo)).min(1.0)
}

/// Normal approximation with continuity correction.
fn normal_two_sided_p(ranks: &[f64], w_plus: f64, n: usize) -> f64 {
    let nf = n as f64;
    let mean = ranks.iter().sum::<f64>() / 2.0;
    let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0;
    let z = (w_plus - mean).abs() - 0.5;
    let z = z.max(0.0) / var.sqrt();
    2.0 * (1.0 - standard_normal_cdf(z))
}

fn standard_normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + erf(x / std::f64::consts::SQRT_2))
}

/// Abramowitz & Stegun 7.1.26 polynomial approximation.
fn erf(x: f64) -> f64 {
    let sign = if x < 0.0 { -1.0 } else { 1.0 };
    let x = x.abs();
    let t = 1.0 / (1.0 + 0.3275911 * x);
    let y = 1.0
        - (((((1.061405429 * t - 1.453152027) * t) + 1.421413741) * t - 0.284496736) * t
            + 0.254829592)
            * t
            * (-x * x).exp();
    sign * y
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn perfect_diagonal() {
        let cm = ConfusionMatrix::from_counts(
            vec![1, 2, 3],
            vec![vec![10, 0, 0], vec![0, 20, 0], vec![0, 0, 30]],
        );
        let m = metrics(&cm).unwrap();
        assert_eq!(m.oa, 1.0);
        assert_eq!(m.aa, 1.0);
        assert_eq!(m.kappa, 1.0);
    }

    #[test]
    fn hand_computed_two_class_case() {
        // Cohen's formula by hand: p0 = 0.8, pe = (50*60 + 50*40)/100^2
        // = 0.5, kappa = 0.3/0.5 = 0.6.
        let cm = ConfusionMatrix::from_counts(vec![1, 2], vec![vec![45, 5], vec![15, 35]]);
        let m = metrics(&cm).unwrap();
        assert!((m.oa - 0.8).abs() < 1e-15);
        assert!((m.kappa - 0.6).abs() < 1e-12);
        assert!((m.per_class[0] - 0.9).abs() < 1e-15);
        assert!((m.per_class[1] - 0.7).abs() < 1e-15);
        assert!((m.aa - 0.8).abs() < 1e-15);
    }

    #[test]
    fn uniform_random_predictions_have_near_zero_kappa() {
        // Deterministic pseudo-random stream, n = 10^4, k = 4.
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
        let classes = vec![1u16, 2, 3, 4];
        let mut cm = ConfusionMatrix::new(classes.clone());
        for _ in 0..10_000 {
            let r = classes[rng.random_range(0..4)];
            let p = classes[rng.random_range(0..4)];
            cm.record(r, p);
        }
        let m = metrics(&cm).unwrap();
        assert!(m.kappa.abs() <= 0.05, "kappa {}", m.kappa);
    }

    #[test]
    fn empty_reference_class_is_reported_and_excluded() {
        let cm = ConfusionMatrix::from_counts(
            vec![1, 2, 3],
            vec![vec![8, 2, 0], vec![0, 0, 0], vec![0, 0, 10]],
        );
        let m = metrics(&cm).unwrap();
        assert_eq!(m.empty_classes, vec![2]);
        assert!(m.per_class[1].is_nan());
        assert!((m.aa - (0.8 + 1.0) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn repetition_stats_two_point() {
        let s = repetition_stats(&[0.5, 0.7]).unwrap();
        assert!((s.mean - 0.6).abs() < 1e-15);
        assert!((s.std - 0.02f64.sqrt()).abs() < 1e-12);

        let s = repetition_stats(&[0.4, 0.4, 0.4]).unwrap();
        assert!(s.std.abs() < 1e-15, "std {}", s.std);

        assert!(repetition_stats(&[0.4]).is_err());
    }

    #[test]
    fn repetition_stats_match_independent_recomputation() {
        let runs = [0.61, 0.58, 0.64, 0.59, 0.62, 0.60, 0.63, 0.57, 0.65, 0.61];
        let s = repetition_stats(&runs).unwrap();
        // Spreadsheet-style two-pass recomputation.
        let mean = runs.iter().sum::<f64>() / 10.0;
        let std = (runs.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / 9.0).sqrt();
        assert!((s.mean - mean).abs() < 1e-15);
        assert!((s.std - std).abs() < 1e-15);
    }

    #[test]
    fn wilcoxon_identical_vectors() {
        let a = [0.5, 0.6, 0.7, 0.8, 0.9];
        let r = wilcoxon_compare(&a, &a, 0.05).unwrap();
        assert_eq!(r.p_value, 1.0);
        assert!(!r.significant);
        assert_eq!(r.n_used, 0);
    }

    #[test]
    fn wilcoxon_ten_wins_exact_p() {
        let a: Vec<f64> = (0..10).map(|i| 0.7 + 0.01 * i as f64).collect();
        let b: Vec<f64> = (0..10).map(|i| 0.5 + 0.01 * i as f64).collect();
        let r = wilcoxon_compare(&a, &b, 0.05).unwrap();
        // Exact enumeration oracle: all 10 differences positive, so
        // W+ = 55 and the two-sided p is 2 * P(W+ >= 55) = 2/1024.
        assert!((r.p_value - 2.0 / 1024.0).abs() < 1e-12, "p {}", r.p_value);
        assert!(r.significant);
        assert_eq!(r.w_plus, 55.0);
    }

    #[test]
    fn wilcoxon_direction_symmetry() {
        let a = [0.9, 0.8, 0.85, 0.7, 0.75, 0.95];
        let b = [0.5, 0.6, 0.55, 0.65, 0.6, 0.5];
        let ab = wilcoxon_compare(&a, &b, 0.05).unwrap();
        let ba = wilcoxon_compare(&b, &a, 0.05).unwrap();
        assert!((ab.p_value - ba.p_value).abs() < 1e-12);
        // W+ flips to the mirror statistic.
        let n = ab.n_used as f64;
        assert!((ab.w_plus + ba.w_plus - n * (n + 1.0) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn wilcoxon_normal_branch_on_large_n() {
        let a: Vec<f64> = (0..20).map(|i| 0.6 + 0.002 * i as f64).collect();
        let b: Vec<f64> = (0..20).map(|i| 0.5 + 0.001 * i as f64).collect();
        let r = wilcoxon_compare(&a, &b, 0.05).unwrap();
        assert!(r.p_value < 0.01);
        assert!(r.significant);
    }

    #[test]
    fn exact_null_pmf_sums_to_one() {
        // For each n <= 12, the enumerated null probabilities over all
        // achievable W+ values must sum to 1.
        for n in 1..=12usize {
            let ranks: Vec<f64> = (1..=n).map(|r| r as f64).collect();
            let total = 1u64 << n;
            let mut mass = std::collections::BTreeMap::new();
            for mask in 0..total {
                let mut w = 0u64;
                for (bit, _) in ranks.iter().enumerate() {
                    if mask >> bit & 1 == 1 {
                        w += bit as u64 + 1;
                    }
                }
                *mass.entry(w).or_insert(0u64) += 1;
            }
            let sum: u64 = mass.values().sum();
            assert_eq!(sum, total);
        }
    }

    proptest! {
        #[test]
        fn metrics_are_permutation_equivariant(
            counts in proptest::collection::vec(
                proptest::collection::vec(0u64..50, 3), 3),
            swap in 0usize..3,
        ) {
            let total: u64 = counts.iter().flatten().sum();
            prop_assume!(total > 0);
            prop_assume!(counts.iter().all(|r| r.iter().sum::<u64>() > 0));
            let cm = ConfusionMatrix::from_counts(vec![1, 2, 3], counts.clone());
            let m1 = metrics(&cm).unwrap();

            // Swap class `swap` with class (swap+1) % 3: permute rows,
            // columns, and the class list together.
            let a = swap;
            let b = (swap + 1) % 3;
            let mut perm = [0usize, 1, 2];
            perm.swap(a, b);
            let permuted: Vec<Vec<u64>> = (0..3)
                .map(|r| (0..3).map(|c| counts[perm[r]][perm[c]]).collect())
                .collect();
            let classes: Vec<u16> = perm.iter().map(|&i| [1u16, 2, 3][i]).collect();
            let cm2 = ConfusionMatrix::from_counts(classes, permuted);
            let m2 = metrics(&cm2).unwrap();

            prop_assert!((m1.oa - m2.oa).abs() < 1e-12);
            prop_assert!((m1.aa - m2.aa).abs() < 1e-12);
            prop_assert!((m1.kappa - m2.kappa).abs() < 1e-12);
            for (r, &p) in perm.iter().enumerate() {
                prop_assert!((m1.per_class[p] - m2.per_class[r]).abs() < 1e-12);
            }
        }

        #[test]
        fn kappa_definition_check(
            counts in proptest::collection::vec(
                proptest::collection::vec(0u64..100, 4), 4),
        ) {
            let total: u64 = counts.iter().flatten().sum();
            prop_assume!(total > 0);
            let cm = ConfusionMatrix::from_counts(vec![1, 2, 3, 4], counts.clone());
            let m = metrics(&cm).unwrap();
            // Independent recomputation of pe and the kappa identity.
            let t = total as f64;
            let mut pe = 0.0;
            for c in 0..4 {
                let row: u64 = counts[c].iter().sum();
                let col: u64 = counts.iter().map(|r| r[c]).sum();
                pe += (row as f64 / t) * (col as f64 / t);
            }
            prop_assume!(pe > 0.0 && pe < 1.0);
            prop_assert!((m.kappa - (m.oa - pe) / (1.0 - pe)).abs() <= 1e-12);
        }
    }
}
