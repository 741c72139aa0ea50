//! Order-insensitive Monte Carlo reduction: per-path jobs run in parallel,
//! values land in a path-indexed buffer, and means/variances are reduced by
//! pairwise summation — so the result is a pure function of the seed and
//! path count, independent of thread scheduling.

use rayon::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McResult {
    pub mean: f64,
    pub std_error: f64,
    pub paths: usize,
}

/// Pairwise (cascade) sum over the slice in index order.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 32 {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

fn reduce(values: &[f64]) -> McResult {
    let m = values.len();
    assert!(m >= 2, "Monte Carlo needs at least 2 paths");
    let mean = pairwise_sum(values) / m as f64;
    let devs: Vec<f64> = values.iter().map(|v| (v - mean) * (v - mean)).collect();
    let var = pairwise_sum(&devs) / (m as f64 - 1.0);
    McResult { mean, std_error: (var / m as f64).sqrt(), paths: m }
}

/// Mean and standard error of a scalar per-path job over paths 0..m.
pub fn mc_expectation<F>(job: F, m: usize, base_seed: u64) -> McResult
where
    F: Fn(u64, u64) -> f64 + Sync,
{
    let values: Vec<f64> = (0..m as u64).into_par_iter().map(|k| job(base_seed, k)).collect();
    reduce(&values)
}

/// Vector-valued variant: the job returns the same number of quantities per
/// path; each component is reduced independently.
pub fn mc_expectation_vec<F>(job: F, m: usize, base_seed: u64, width: usize) -> Vec<McResult>
where
    F: Fn(u64, u64) -> Vec<f64> + Sync,
{
    let rows: Vec<Vec<f64>> = (0..m as u64).into_par_iter().map(|k| job(base_seed, k)).collect();
    (0..width)
        .map(|q| {
            let col: Vec<f64> = rows.iter().map(|r| r[q]).collect();
            reduce(&col)
        })
        .collect()
}
