//! Thread-count independent reductions.
//!
//! Every sum over paths is split into fixed-size chunks; partial sums are
//! computed in parallel and then combined sequentially in chunk order, so the
//! floating-point result never depends on how rayon schedules the work.

use rayon::prelude::*;

pub(crate) const CHUNK: usize = 4096;

/// Sum with a fixed chunking order.
pub fn ordered_sum(values: &[f64]) -> f64 {
    let partials: Vec<f64> = values
        .par_chunks(CHUNK)
        .map(|c| c.iter().sum::<f64>())
        .collect();
    partials.iter().sum()
}

/// Sample mean and standard error of the mean.
pub fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = ordered_sum(values) / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let partials: Vec<f64> = values
        .par_chunks(CHUNK)
        .map(|c| c.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>())
        .collect();
    let var = partials.iter().sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

/// Weighted mean `sum(w v) / n` (not normalized by the weights) and its standard error.
pub fn weighted_mean_and_se(values: &[f64], weights: &[f64]) -> (f64, f64) {
    let prod: Vec<f64> = values
        .par_iter()
        .zip(weights.par_iter())
        .map(|(v, w)| v * w)
        .collect();
    mean_and_se(&prod)
}

/// Sample variance (unbiased).
pub fn variance(values: &[f64]) -> f64 {
    let (_, se) = mean_and_se(values);
    se * se * values.len() as f64
}
