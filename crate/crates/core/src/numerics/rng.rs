//! Seeded random streams.
//!
//! Every consumer of randomness owns one [`RngStream`]. A stream is a
//! ChaCha8 generator keyed by the run's root seed and positioned on its own
//! stream id, so two streams with the same `(root_seed, stream_id)` replay the
//! same sequence and streams with different ids never overlap.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::Matrix;
use crate::error::{Error, Result};

/// Stream ids are laid out as `client_base(k) + purpose`.
pub mod streams {
    /// Server-side initialization (shared adapters, global state).
    pub const SERVER: u64 = 0;
    /// Ground-truth generation for the synthetic task of client `k` uses
    /// `GROUND_TRUTH + k`.
    pub const GROUND_TRUTH: u64 = 1 << 20;
    /// Dataset generation for client `k` uses `DATASET + k`.
    pub const DATASET: u64 = 2 << 20;
    /// Theory-harness instance generation.
    pub const THEORY: u64 = 3 << 20;

    /// Purposes inside a client block.
    pub const CLIENT_INIT: u64 = 0;
    pub const BATCH_LOWER: u64 = 1;
    pub const BATCH_UPPER: u64 = 2;
    pub const BATCH_UPPER_TILDE: u64 = 3;
    pub const BATCH_CROSS: u64 = 4;

    const CLIENT_BLOCK: u64 = 16;
    const CLIENT_OFFSET: u64 = 4 << 20;

    pub fn client(client_id: usize, purpose: u64) -> u64 {
        CLIENT_OFFSET + client_id as u64 * CLIENT_BLOCK + purpose
    }
}

#[derive(Clone, Debug)]
pub struct RngStream {
    root_seed: u64,
    stream_id: u64,
    inner: ChaCha8Rng,
}

impl RngStream {
    pub fn new(root_seed: u64, stream_id: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(root_seed);
        inner.set_stream(stream_id);
        Self {
            root_seed,
            stream_id,
            inner,
        }
    }

    pub fn root_seed(&self) -> u64 {
        self.root_seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    pub fn standard_normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    /// Uniform draw in `[lo, hi)`.
    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        items.shuffle(&mut self.inner);
    }
}

/// Matrix with i.i.d. `N(mean, std²)` entries drawn in row-major order.
pub fn gaussian_matrix(
    rows: usize,
    cols: usize,
    mean: f64,
    std: f64,
    rng: &mut RngStream,
) -> Result<Matrix> {
    if rows == 0 || cols == 0 {
        return Err(Error::invalid("gaussian_matrix needs rows, cols >= 1"));
    }
    if !(std >= 0.0) || !std.is_finite() || !mean.is_finite() {
        return Err(Error::invalid(format!(
            "gaussian_matrix needs finite mean and std >= 0, got ({mean}, {std})"
        )));
    }
    let data = (0..rows * cols)
        .map(|_| mean + std * rng.standard_normal())
        .collect();
    Matrix::new(rows, cols, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_std_gives_mean() {
        let mut rng = RngStream::new(3, 0);
        let m = gaussian_matrix(2, 2, 0.0, 0.0, &mut rng).unwrap();
        assert_eq!(m, Matrix::zeros(2, 2));
        let m = gaussian_matrix(2, 3, 1.5, 0.0, &mut rng).unwrap();
        assert_eq!(m, Matrix::filled(2, 3, 1.5));
    }

    #[test]
    fn rejects_empty_and_negative_std() {
        let mut rng = RngStream::new(3, 0);
        assert!(gaussian_matrix(0, 2, 0.0, 1.0, &mut rng).is_err());
        assert!(gaussian_matrix(2, 0, 0.0, 1.0, &mut rng).is_err());
        assert!(gaussian_matrix(2, 2, 0.0, -1.0, &mut rng).is_err());
    }

    #[test]
    fn equal_streams_replay() {
        let a = gaussian_matrix(1000, 10, 0.0, 1.0, &mut RngStream::new(11, 5)).unwrap();
        let b = gaussian_matrix(1000, 10, 0.0, 1.0, &mut RngStream::new(11, 5)).unwrap();
        assert_eq!(a, b);
        let c = gaussian_matrix(1000, 10, 0.0, 1.0, &mut RngStream::new(11, 6)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn sample_moments() {
        let m = gaussian_matrix(1000, 10, 0.0, 1.0, &mut RngStream::new(42, 1)).unwrap();
        let n = m.as_slice().len() as f64;
        let mean = m.as_slice().iter().sum::<f64>() / n;
        let var = m.as_slice().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!(mean.abs() < 0.05, "mean {mean}");
        let std = var.sqrt();
        assert!((0.97..=1.03).contains(&std), "std {std}");
    }

    #[test]
    fn distinct_streams_are_uncorrelated() {
        let a = gaussian_matrix(1, 20000, 0.0, 1.0, &mut RngStream::new(9, 1)).unwrap();
        let b = gaussian_matrix(1, 20000, 0.0, 1.0, &mut RngStream::new(9, 2)).unwrap();
        let corr: f64 = a
            .as_slice()
            .iter()
            .zip(b.as_slice())
            .map(|(x, y)| x * y)
            .sum::<f64>()
            / 20000.0;
        assert!(corr.abs() < 0.03, "corr {corr}");
    }
}
