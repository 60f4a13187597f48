//! Classification metrics over probability matrices. Summation order is fixed
//! (sample order), so results are reproducible bit-for-bit.

use ndarray::{Array2, ArrayView1};

pub const ECE_BINS: usize = 15;

fn argmax(row: ArrayView1<'_, f64>) -> usize {
    let mut best = 0;
    for (k, &p) in row.iter().enumerate() {
        if p > row[best] {
            best = k;
        }
    }
    best
}

pub fn accuracy(probs: &Array2<f64>, labels: &[usize]) -> f64 {
    let hits = probs
        .rows()
        .into_iter()
        .zip(labels)
        .filter(|(row, &y)| argmax(row.view()) == y)
        .count();
    hits as f64 / labels.len() as f64
}

/// Mean negative log-likelihood in nats. Probabilities are floored at the smallest
/// positive normal `f64` so a confident miss stays finite.
pub fn nll(probs: &Array2<f64>, labels: &[usize]) -> f64 {
    let total: f64 = probs
        .rows()
        .into_iter()
        .zip(labels)
        .map(|(row, &y)| -row[y].max(f64::MIN_POSITIVE).ln())
        .sum();
    total / labels.len() as f64
}

/// Expected calibration error with equal-width confidence bins.
pub fn ece(probs: &Array2<f64>, labels: &[usize], bins: usize) -> f64 {
    let mut count = vec![0usize; bins];
    let mut conf_sum = vec![0.0; bins];
    let mut hit_sum = vec![0.0; bins];
    for (row, &y) in probs.rows().into_iter().zip(labels) {
        let pred = argmax(row.view());
        let conf = row[pred];
        let b = ((conf * bins as f64) as usize).min(bins - 1);
        count[b] += 1;
        conf_sum[b] += conf;
        hit_sum[b] += f64::from(u8::from(pred == y));
    }
    let n = labels.len() as f64;
    (0..bins)
        .filter(|&b| count[b] > 0)
        .map(|b| (hit_sum[b] - conf_sum[b]).abs() / n)
        .sum()
}
