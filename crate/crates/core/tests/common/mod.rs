//! Shared fixtures for the integration tests.

#![allow(dead_code)]

use fedlora::models::lora::DataRole;
use fedlora::models::RegressionData;
use fedlora::numerics::{gaussian_matrix, RngStream};

pub fn random_data(samples: usize, m: usize, n: usize, rng: &mut RngStream) -> RegressionData {
    let x = gaussian_matrix(samples, m, 0.0, 1.0, rng).unwrap();
    let y = gaussian_matrix(samples, n, 0.0, 1.0, rng).unwrap();
    RegressionData::new(x, y, DataRole::Train).unwrap()
}

pub fn random_vec(len: usize, scale: f64, rng: &mut RngStream) -> Vec<f64> {
    (0..len).map(|_| scale * rng.standard_normal()).collect()
}

/// `‖a − b‖ / ‖b‖`.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    diff / scale.max(1e-12)
}
