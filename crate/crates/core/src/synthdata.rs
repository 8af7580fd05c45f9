//! Synthetic low-rank regression clients.
//!
//! Each client `k` owns a ground truth `W_k* = A_k* B_k*` with Gaussian
//! factors of its own rank, inputs `x ~ N(0, I)` and targets
//! `y = x W_k* + ε`. The first `⌊train_fraction · samples⌋` rows form the
//! training split and the rest the test split.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{DataRole, RegressionData};
use crate::numerics::{gaussian_matrix, streams, Matrix, RngStream};

#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruth {
    pub w_star: Matrix,
    pub true_rank: usize,
    /// `m × true_rank`.
    pub factor_a: Matrix,
    /// `true_rank × n`.
    pub factor_b: Matrix,
}

pub fn make_ground_truth(m: usize, n: usize, rank: usize, rng: &mut RngStream) -> Result<GroundTruth> {
    if rank == 0 || rank > m.min(n) {
        return Err(Error::invalid(format!(
            "ground-truth rank {rank} outside 1..={}",
            m.min(n)
        )));
    }
    let factor_a = gaussian_matrix(m, rank, 0.0, 1.0, rng)?;
    let factor_b = gaussian_matrix(rank, n, 0.0, 1.0, rng)?;
    Ok(GroundTruth {
        w_star: factor_a.matmul(&factor_b),
        true_rank: rank,
        factor_a,
        factor_b,
    })
}

/// Generates `samples` rows and splits them by index.
pub fn make_client_dataset(
    gt: &GroundTruth,
    samples: usize,
    noise_std: f64,
    train_fraction: f64,
    rng: &mut RngStream,
) -> Result<(RegressionData, RegressionData)> {
    let n_train = (train_fraction * samples as f64).floor() as usize;
    if samples < 2 || !(train_fraction > 0.0 && train_fraction < 1.0) || n_train == 0 || n_train == samples {
        return Err(Error::invalid(format!(
            "degenerate split: {samples} samples at train fraction {train_fraction}"
        )));
    }
    let (m, n) = gt.w_star.shape();
    let x = gaussian_matrix(samples, m, 0.0, 1.0, rng)?;
    let mut y = x.matmul(&gt.w_star);
    y.add_scaled(&gaussian_matrix(samples, n, 0.0, noise_std, rng)?, 1.0)?;
    let train: Vec<usize> = (0..n_train).collect();
    let test: Vec<usize> = (n_train..samples).collect();
    Ok((
        RegressionData::new(x.select_rows(&train), y.select_rows(&train), DataRole::Train)?,
        RegressionData::new(x.select_rows(&test), y.select_rows(&test), DataRole::Test)?,
    ))
}

/// How the configured noise level is read.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseScale {
    /// The level is a variance; `σ = √level`.
    #[default]
    Variance,
    /// The level is the standard deviation itself.
    StdDev,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub m: usize,
    pub n: usize,
    pub true_ranks: Vec<usize>,
    pub samples: usize,
    pub noise_levels: Vec<f64>,
    pub noise_scale: NoiseScale,
    pub train_fraction: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            m: 10,
            n: 10,
            true_ranks: vec![3, 4],
            samples: 1000,
            noise_levels: vec![0.1, 0.2],
            noise_scale: NoiseScale::Variance,
            train_fraction: 0.7,
        }
    }
}

/// Ground truth and splits of one synthetic client.
#[derive(Clone, Debug)]
pub struct SyntheticClient {
    pub ground_truth: GroundTruth,
    pub noise_std: f64,
    pub train: RegressionData,
    pub test: RegressionData,
}

impl SyntheticClient {
    /// `n σ²`, the expected per-sample loss of the true weight.
    pub fn noise_floor(&self) -> f64 {
        self.ground_truth.w_star.cols() as f64 * self.noise_std * self.noise_std
    }
}

impl SyntheticSpec {
    pub fn clients(&self) -> usize {
        self.true_ranks.len()
    }

    pub fn noise_std(&self, client: usize) -> f64 {
        let level = self.noise_levels[client];
        match self.noise_scale {
            NoiseScale::Variance => level.sqrt(),
            NoiseScale::StdDev => level,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.true_ranks.is_empty() {
            return Err(Error::invalid("synthetic spec needs at least one client"));
        }
        if self.noise_levels.len() != self.true_ranks.len() {
            return Err(Error::invalid(format!(
                "{} noise levels for {} clients",
                self.noise_levels.len(),
                self.true_ranks.len()
            )));
        }
        if self.noise_levels.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::invalid("noise levels must be finite and non-negative"));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::invalid("train fraction must lie in (0, 1)"));
        }
        Ok(())
    }

    /// Builds every client from the root seed; client `k` draws from its own
    /// ground-truth and dataset streams.
    pub fn generate(&self, seed: u64) -> Result<Vec<SyntheticClient>> {
        self.validate()?;
        (0..self.clients())
            .map(|k| {
                let mut gt_rng = RngStream::new(seed, streams::GROUND_TRUTH + k as u64);
                let ground_truth = make_ground_truth(self.m, self.n, self.true_ranks[k], &mut gt_rng)?;
                let noise_std = self.noise_std(k);
                let mut data_rng = RngStream::new(seed, streams::DATASET + k as u64);
                let (train, test) = make_client_dataset(
                    &ground_truth,
                    self.samples,
                    noise_std,
                    self.train_fraction,
                    &mut data_rng,
                )?;
                Ok(SyntheticClient {
                    ground_truth,
                    noise_std,
                    train,
                    test,
                })
            })
            .collect()
    }
}

/// Writes a dataset as CSV with header `x_0..x_{m-1},y_0..y_{n-1}`.
pub fn write_dataset_csv(data: &RegressionData, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let header: Vec<String> = (0..data.input_dim())
        .map(|i| format!("x_{i}"))
        .chain((0..data.output_dim()).map(|j| format!("y_{j}")))
        .collect();
    let mut body = header.join(",");
    body.push('\n');
    for s in 0..data.samples() {
        let row: Vec<String> = data
            .x
            .row(s)
            .iter()
            .chain(data.y.row(s))
            .map(|v| format!("{v:e}"))
            .collect();
        body.push_str(&row.join(","));
        body.push('\n');
    }
    out.write_all(body.as_bytes())
        .and_then(|_| out.flush())
        .map_err(|e| Error::io(path, e))
}

pub fn read_dataset_csv(path: impl AsRef<Path>, role: DataRole) -> Result<RegressionData> {
    let path = path.as_ref();
    let parse_err = |message: String| Error::Parse {
        path: path.to_path_buf(),
        message,
    };
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines();
    let header = match lines.next() {
        Some(line) => line.map_err(|e| Error::io(path, e))?,
        None => return Err(parse_err("empty file".into())),
    };
    let cols: Vec<&str> = header.trim_end().split(',').collect();
    let n_in = cols.iter().take_while(|c| c.starts_with("x_")).count();
    let n_out = cols.len() - n_in;
    let expected = (0..n_in)
        .map(|i| format!("x_{i}"))
        .chain((0..n_out).map(|j| format!("y_{j}")));
    if n_in == 0 || n_out == 0 || !expected.eq(cols.iter().map(|c| c.to_string())) {
        return Err(parse_err(format!("bad header {header:?}")));
    }
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for (i, line) in lines.enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let values = line
            .trim_end()
            .split(',')
            .map(|v| v.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| parse_err(format!("line {}: {e}", i + 2)))?;
        if values.len() != n_in + n_out {
            return Err(parse_err(format!("line {}: {} fields", i + 2, values.len())));
        }
        xs.extend_from_slice(&values[..n_in]);
        ys.extend_from_slice(&values[n_in..]);
    }
    let samples = xs.len() / n_in;
    RegressionData::new(Matrix::new(samples, n_in, xs)?, Matrix::new(samples, n_out, ys)?, role)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::rrr_best_fit;
    use crate::numerics::{effective_rank, svd};

    #[test]
    fn ground_truth_rank() {
        let mut rng = RngStream::new(3, 0);
        let gt = make_ground_truth(10, 10, 3, &mut rng).unwrap();
        assert_eq!(effective_rank(&gt.w_star, 0.999).unwrap(), 3);
        let full = make_ground_truth(10, 10, 10, &mut rng).unwrap();
        assert_eq!(svd(&full.w_star).unwrap().numerical_rank(), 10);
        assert!(make_ground_truth(10, 10, 11, &mut rng).is_err());
        assert!(make_ground_truth(10, 10, 0, &mut rng).is_err());
        let again = make_ground_truth(10, 10, 3, &mut RngStream::new(3, 0)).unwrap();
        assert_eq!(again, gt);
    }

    #[test]
    fn split_sizes_and_noiseless_fit() {
        let mut rng = RngStream::new(1, 0);
        let gt = make_ground_truth(10, 10, 3, &mut rng).unwrap();
        let (train, test) = make_client_dataset(&gt, 1000, 0.0, 0.7, &mut rng).unwrap();
        assert_eq!((train.samples(), test.samples()), (700, 300));
        assert_eq!((train.role, test.role), (DataRole::Train, DataRole::Test));
        assert!(rrr_best_fit(&train, 3).unwrap().loss < 1e-20);
        assert!(make_client_dataset(&gt, 1, 0.0, 0.7, &mut rng).is_err());
        assert!(make_client_dataset(&gt, 10, 0.0, 1.0, &mut rng).is_err());
    }

    #[test]
    fn default_spec_noise_is_variance() {
        let spec = SyntheticSpec::default();
        assert!((spec.noise_std(0) - 0.1f64.sqrt()).abs() < 1e-15);
        let std = SyntheticSpec {
            noise_scale: NoiseScale::StdDev,
            ..spec
        };
        assert_eq!(std.noise_std(1), 0.2);
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let clients = SyntheticSpec {
            samples: 20,
            ..SyntheticSpec::default()
        }
        .generate(4)
        .unwrap();
        let path = dir.path().join("d.csv");
        write_dataset_csv(&clients[0].train, &path).unwrap();
        let back = read_dataset_csv(&path, DataRole::Train).unwrap();
        assert_eq!(back, clients[0].train);
    }
}
