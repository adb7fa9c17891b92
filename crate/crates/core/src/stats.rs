//! Deterministic Monte Carlo reduction helpers.
//!
//! Per-path work is parallelized with rayon, but every reduction happens
//! sequentially in path-index order on the collected vector, so results are
//! bit-identical for any worker count.

use rayon::prelude::*;
use serde::Serialize;

/// A Monte Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub value: f64,
    pub std_error: f64,
}

impl Estimate {
    pub const fn exact(value: f64) -> Self {
        Estimate {
            value,
            std_error: 0.0,
        }
    }
}

/// Map `f` over path indices `0..n_paths` in parallel, preserving order.
pub fn par_map_paths<T, F>(n_paths: u64, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(u64) -> T + Sync + Send,
{
    (0..n_paths).into_par_iter().map(f).collect()
}

/// Fallible variant of [`par_map_paths`]; the first error in path-index
/// order wins.
pub fn try_par_map_paths<T, F>(n_paths: u64, f: F) -> crate::Result<Vec<T>>
where
    T: Send,
    F: Fn(u64) -> crate::Result<T> + Sync + Send,
{
    let results: Vec<crate::Result<T>> = (0..n_paths).into_par_iter().map(f).collect();
    results.into_iter().collect()
}

/// Sample mean and standard error of the mean, computed by a sequential
/// two-pass algorithm over the slice in index order.
pub fn mean_se(values: &[f64]) -> Estimate {
    let n = values.len();
    assert!(n >= 1, "mean_se needs at least one sample");
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return Estimate {
            value: mean,
            std_error: 0.0,
        };
    }
    let m2 = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>();
    let var = m2 / (n - 1) as f64;
    Estimate {
        value: mean,
        std_error: (var / n as f64).sqrt(),
    }
}

/// Sample covariance of two paired samples (index order, two-pass).
pub fn covariance(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len());
    let n = xs.len();
    assert!(n >= 2, "covariance needs at least two samples");
    let mx = xs.iter().sum::<f64>() / n as f64;
    let my = ys.iter().sum::<f64>() / n as f64;
    let s = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| (x - mx) * (y - my))
        .sum::<f64>();
    s / (n - 1) as f64
}
