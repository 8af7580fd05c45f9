//! Flat-vector helpers used by the optimizers and derivative oracles.

use crate::error::{Error, Result};

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub fn scaled(a: &[f64], factor: f64) -> Vec<f64> {
    a.iter().map(|x| x * factor).collect()
}

/// `y += alpha * x`.
pub fn axpy(y: &mut [f64], alpha: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// `a + alpha * b` as a new vector.
pub fn add_scaled(a: &[f64], alpha: f64, b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + alpha * y).collect()
}

pub fn check_len(got: usize, want: usize, what: &str) -> Result<()> {
    if got != want {
        return Err(Error::invalid(format!(
            "{what}: length {got}, expected {want}"
        )));
    }
    Ok(())
}

pub fn all_finite(a: &[f64]) -> bool {
    a.iter().all(|v| v.is_finite())
}

/// Largest relative deviation `|a - b| / max(|a|, |b|, floor)` over entries,
/// measured against the larger vector norm so tiny entries do not dominate.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let scale = norm(a).max(norm(b)).max(f64::MIN_POSITIVE);
    norm(&sub(a, b)) / scale
}
