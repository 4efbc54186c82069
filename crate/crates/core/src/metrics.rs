//! Evaluation metrics: top-k accuracy, mAP, ROC AUC and d-prime.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::{math, Error, Result};

/// Cap applied to the AUC before inverting the normal CDF.
pub const AUC_CAP: f64 = 1e-12;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n: usize,
    /// Percentages.
    pub top1: f64,
    pub top5: f64,
    pub map: f64,
    pub auc: f64,
    pub d_prime: f64,
    /// Top-1 of each pass on its own, in percent.
    #[serde(default)]
    pub per_pass_top1: Vec<f64>,
    /// Classes left out of the macro averages (no positives, or for AUC no
    /// negatives).
    #[serde(default)]
    pub excluded_classes: Vec<usize>,
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * math::erfc(-x / math::SQRT_2)
}

/// Inverse standard normal CDF: Acklam's rational approximation followed by
/// one Halley step, accurate to well below 1e-9 on `(0, 1)`.
pub fn inverse_normal_cdf(p: f64) -> f64 {
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    const A: [f64; 6] = [
        -3.969683028665376e1,
        2.209460984245205e2,
        -2.759285104469687e2,
        1.383577518672690e2,
        -3.066479806614716e1,
        2.506628277459239,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e1,
        1.615858368580409e2,
        -1.556989798598866e2,
        6.680131188771972e1,
        -1.328068155288572e1,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-3,
        -3.223964580411365e-1,
        -2.400758277161838,
        -2.549732539343734,
        4.374664141464968,
        2.938163982698783,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-3,
        3.224671290700398e-1,
        2.445134137142996,
        3.754408661907416,
    ];
    const LOW: f64 = 0.02425;
    let x = if p < LOW {
        let q = math::sqrt(-2.0 * math::ln(p));
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = math::sqrt(-2.0 * math::ln(1.0 - p));
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };
    let e = normal_cdf(x) - p;
    let u = e * math::sqrt(2.0 * math::PI) * math::exp(x * x / 2.0);
    x - u / (1.0 + x * u / 2.0)
}

/// `sqrt(2) * Phi^-1(auc)` with the AUC capped to `[1e-12, 1 - 1e-12]`.
pub fn d_prime(auc: f64) -> f64 {
    math::SQRT_2 * inverse_normal_cdf(auc.clamp(AUC_CAP, 1.0 - AUC_CAP))
}

/// Mann-Whitney AUC (ties count one half). `None` without both classes.
pub fn auc(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Sum of mid-ranks of the positives.
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            if positive[k] {
                rank_sum += mid;
            }
        }
        i = j + 1;
    }
    let (p, n) = (n_pos as f64, n_neg as f64);
    Some((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// Mean of the precision at the rank of every positive (scores descending,
/// ties broken by index). `None` without positives.
pub fn average_precision(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let n_pos = positive.iter().filter(|&&p| p).count();
    if n_pos == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut hits = 0usize;
    let mut total = 0.0;
    for (rank, &i) in order.iter().enumerate() {
        if positive[i] {
            hits += 1;
            total += hits as f64 / (rank + 1) as f64;
        }
    }
    Some(total / n_pos as f64)
}

/// Classes in descending score order (ties to the lower index).
pub fn ranked_classes(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order
}

/// Percentage of samples with a positive class among their top `k` scores.
pub fn top_k(scores: &[Vec<f64>], positives: &[Vec<bool>], k: usize) -> f64 {
    if scores.is_empty() {
        return 0.0;
    }
    let hits = scores
        .iter()
        .zip(positives)
        .filter(|(s, p)| ranked_classes(s).iter().take(k).any(|&c| p[c]))
        .count();
    100.0 * hits as f64 / scores.len() as f64
}

/// Metrics over per-sample class scores and binary relevance labels.
pub fn compute_metrics(scores: &[Vec<f64>], positives: &[Vec<bool>]) -> Result<MetricsReport> {
    if scores.len() != positives.len() {
        return Err(Error::Contract("scores and labels differ in length".into()));
    }
    let n_classes = scores.first().map_or(0, Vec::len);
    for (s, p) in scores.iter().zip(positives) {
        if s.len() != n_classes || p.len() != n_classes {
            return Err(Error::Contract("inconsistent class count".into()));
        }
        if !s.iter().all(|x| x.is_finite()) {
            return Err(Error::NonFinite("metric scores".into()));
        }
    }
    let mut aps = Vec::new();
    let mut aucs = Vec::new();
    let mut excluded = Vec::new();
    for c in 0..n_classes {
        let col: Vec<f64> = scores.iter().map(|s| s[c]).collect();
        let pos: Vec<bool> = positives.iter().map(|p| p[c]).collect();
        match (average_precision(&col, &pos), auc(&col, &pos)) {
            (Some(ap), Some(a)) => {
                aps.push(ap);
                aucs.push(a);
            }
            (Some(ap), None) => {
                aps.push(ap);
                excluded.push(c);
            }
            _ => excluded.push(c),
        }
    }
    if !excluded.is_empty() {
        log::warn!("classes {excluded:?} lack positives or negatives and are left out of macro averages");
    }
    let mean = |v: &[f64]| if v.is_empty() { 0.0 } else { v.iter().sum::<f64>() / v.len() as f64 };
    let auc_mean = if aucs.is_empty() { 0.5 } else { mean(&aucs) };
    Ok(MetricsReport {
        n: scores.len(),
        top1: top_k(scores, positives, 1),
        top5: top_k(scores, positives, 5.min(n_classes.max(1))),
        map: mean(&aps),
        auc: auc_mean,
        d_prime: d_prime(auc_mean),
        per_pass_top1: Vec::new(),
        excluded_classes: excluded,
    })
}

/// One-hot relevance rows from class indices.
pub fn one_hot_labels(labels: &[usize], n_classes: usize) -> Vec<Vec<bool>> {
    labels
        .iter()
        .map(|&l| (0..n_classes).map(|c| c == l).collect())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn d_prime_anchors() {
        assert!((d_prime(0.978) - 2.846).abs() < 0.01, "{}", d_prime(0.978));
        assert_eq!(d_prime(0.5), 0.0);
    }

    #[test]
    fn d_prime_round_trip() {
        for d in [0.5, 1.0, 2.0, 3.0] {
            let a = normal_cdf(d / core::f64::consts::SQRT_2);
            assert!((d_prime(a) - d).abs() < 1e-6);
        }
    }

    #[test]
    fn inverse_cdf_matches_bisection() {
        let bisect = |p: f64| {
            let (mut lo, mut hi) = (-40.0f64, 40.0f64);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if normal_cdf(mid) < p {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            0.5 * (lo + hi)
        };
        for p in [1e-12, 1e-6, 0.01, 0.02425, 0.1, 0.3, 0.5, 0.7, 0.9, 0.97575, 0.999, 1.0 - 1e-9] {
            let x = inverse_normal_cdf(p);
            // In the tails one ulp of p moves x by ulp / pdf(x).
            let pdf = (-0.5 * x * x).exp() / (2.0 * core::f64::consts::PI).sqrt();
            let tol = 1e-9 + 4.0 * f64::EPSILON / pdf;
            assert!((x - bisect(p)).abs() < tol, "p = {p}");
        }
    }

    #[test]
    fn perfect_separation() {
        let scores = alloc::vec![
            alloc::vec![0.9, 0.05, 0.05],
            alloc::vec![0.1, 0.8, 0.1],
            alloc::vec![0.2, 0.1, 0.7],
            alloc::vec![0.6, 0.3, 0.1],
        ];
        let labels = one_hot_labels(&[0, 1, 2, 0], 3);
        let m = compute_metrics(&scores, &labels).unwrap();
        assert_eq!(m.top1, 100.0);
        assert_eq!(m.map, 1.0);
        assert_eq!(m.auc, 1.0);
        assert!((m.d_prime - d_prime(1.0 - 1e-12)).abs() < 1e-12);
        assert!(m.d_prime.is_finite());
    }

    #[test]
    fn class_without_positives_is_excluded() {
        let scores = alloc::vec![alloc::vec![0.9, 0.1, 0.0], alloc::vec![0.2, 0.8, 0.0]];
        let m = compute_metrics(&scores, &one_hot_labels(&[0, 1], 3)).unwrap();
        assert_eq!(m.excluded_classes, alloc::vec![2]);
        assert_eq!(m.map, 1.0);
    }

    #[test]
    fn auc_with_ties_and_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let n = rng.random_range(2..30);
            let s: Vec<f64> = (0..n).map(|_| (rng.random_range(0..5) as f64) * 0.25).collect();
            let p: Vec<bool> = (0..n).map(|_| rng.random_bool(0.4)).collect();
            let brute = {
                let (mut num, mut den) = (0.0, 0.0);
                for i in 0..n {
                    for j in 0..n {
                        if p[i] && !p[j] {
                            den += 1.0;
                            num += if s[i] > s[j] { 1.0 } else if s[i] == s[j] { 0.5 } else { 0.0 };
                        }
                    }
                }
                if den == 0.0 { None } else { Some(num / den) }
            };
            match (auc(&s, &p), brute) {
                (Some(a), Some(b)) => assert!((a - b).abs() < 1e-12),
                (None, None) => {}
                other => panic!("{other:?}"),
            }
        }
    }

    #[test]
    fn random_scores_give_chance_auc() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let n = 4000;
        let s: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let p: Vec<bool> = (0..n).map(|i| i % 2 == 0).collect();
        assert!((auc(&s, &p).unwrap() - 0.5).abs() < 0.03);
    }

    #[test]
    fn top_k_ordering() {
        let scores = alloc::vec![alloc::vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7]];
        let labels = one_hot_labels(&[0], 7);
        assert_eq!(top_k(&scores, &labels, 1), 0.0);
        assert_eq!(top_k(&scores, &labels, 5), 0.0);
        assert_eq!(top_k(&scores, &labels, 7), 100.0);
    }
}
