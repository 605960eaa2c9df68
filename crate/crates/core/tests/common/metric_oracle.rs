//! Brute-force metric oracles.

use rand::Rng;

/// Scores on a coarse grid so ties are common.
pub fn fixture(seed: u64, n: usize, labels: usize) -> (Vec<Vec<f64>>, Vec<Vec<u8>>) {
    let mut r = super::rng(seed);
    let scores = (0..n).map(|_| (0..labels).map(|_| (r.random_range(0..10) as f64) / 10.0).collect()).collect();
    let y = (0..n).map(|_| (0..labels).map(|_| r.random_range(0..2u8)).collect()).collect();
    (scores, y)
}

pub fn brute_counts(scores: &[Vec<f64>], y: &[Vec<u8>], threshold: f64) -> Vec<(usize, usize, usize, usize)> {
    let labels = y[0].len();
    let mut out = Vec::new();
    for j in 0..labels {
        let (mut tp, mut fp, mut fn_, mut tn) = (0, 0, 0, 0);
        for i in 0..y.len() {
            let pred = scores[i][j] >= threshold;
            let truth = y[i][j] == 1;
            if pred && truth {
                tp += 1;
            } else if pred {
                fp += 1;
            } else if truth {
                fn_ += 1;
            } else {
                tn += 1;
            }
        }
        out.push((tp, fp, fn_, tn));
    }
    out
}

/// Fraction of (positive, negative) pairs ordered correctly, ties half.
pub fn pair_auc(s: &[f64], y: &[u8]) -> f64 {
    let (mut good, mut total) = (0.0, 0.0);
    for i in 0..s.len() {
        for k in 0..s.len() {
            if y[i] == 1 && y[k] == 0 {
                total += 1.0;
                if s[i] > s[k] {
                    good += 1.0;
                } else if s[i] == s[k] {
                    good += 0.5;
                }
            }
        }
    }
    good / total
}

/// Area under the ROC polyline, sweeping the threshold over distinct scores.
pub fn trapezoid_auc(s: &[f64], y: &[u8]) -> f64 {
    let p = y.iter().filter(|&&v| v == 1).count() as f64;
    let n = y.len() as f64 - p;
    let mut thresholds: Vec<f64> = s.to_vec();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let (mut prev_tpr, mut prev_fpr, mut area) = (0.0, 0.0, 0.0);
    for t in thresholds {
        let tp = s.iter().zip(y).filter(|(v, l)| **v >= t && **l == 1).count() as f64;
        let fp = s.iter().zip(y).filter(|(v, l)| **v >= t && **l == 0).count() as f64;
        let (tpr, fpr) = (tp / p, fp / n);
        area += (fpr - prev_fpr) * (tpr + prev_tpr) / 2.0;
        prev_tpr = tpr;
        prev_fpr = fpr;
    }
    area
}

pub fn flatten(scores: &[Vec<f64>], y: &[Vec<u8>]) -> (Vec<f64>, Vec<u8>) {
    (scores.iter().flatten().copied().collect(), y.iter().flatten().copied().collect())
}
