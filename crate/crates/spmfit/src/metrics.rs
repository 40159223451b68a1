//! Shared evaluation grid and error metrics.
//!
//! Fitted surrogates, the reference solver, and the benchmark tables are all
//! compared on one fixed tensor grid of 61 output times × 64 radii spanning
//! the full nondimensional domain [0, 1] × [0, 1], endpoints included.

/// Number of time points on the evaluation/label grid.
pub const LABEL_NT: usize = 61;
/// Number of radial points on the evaluation/label grid.
pub const LABEL_NR: usize = 64;

/// Evaluation times t̂_i = i / (LABEL_NT − 1), i = 0..LABEL_NT.
pub fn label_times() -> Vec<f64> {
    (0..LABEL_NT).map(|i| i as f64 / (LABEL_NT - 1) as f64).collect()
}

/// Evaluation radii r̂_j = j / (LABEL_NR − 1), j = 0..LABEL_NR.
pub fn label_radii() -> Vec<f64> {
    (0..LABEL_NR).map(|j| j as f64 / (LABEL_NR - 1) as f64).collect()
}

/// Relative L2 error ‖a − b‖₂ / ‖b‖₂ (b is the reference).
///
/// Panics if the slices differ in length; returns absolute ‖a‖ if the
/// reference is identically zero.
pub fn relative_l2(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "relative_l2 length mismatch");
    let mut num = 0.0;
    let mut den = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        num += (x - y) * (x - y);
        den += y * y;
    }
    if den == 0.0 {
        num.sqrt()
    } else {
        (num / den).sqrt()
    }
}

/// Mean squared error over paired samples.
pub fn mse(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "mse length mismatch");
    if a.is_empty() {
        return 0.0;
    }
    let sum: f64 = a.iter().zip(b).map(|(&x, &y)| (x - y) * (x - y)).sum();
    sum / a.len() as f64
}

/// Sample mean and standard deviation (n − 1 denominator).
pub fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|&x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}
