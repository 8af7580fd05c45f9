//! Reduced-rank regression oracle: the best rank-constrained linear map for
//! a dataset, used as ground truth for "best achievable at rank r".
//!
//! With the weighting matrix fixed to the identity, the optimum at rank `r`
//! projects the least-squares solution onto the top-`r` eigenvectors of
//! `Σ_yx Σ_xx⁻¹ Σ_xy` (sample covariances). The excess loss over least
//! squares equals the sum of the discarded eigenvalues.

use super::lora::{weight_loss, RegressionData};
use crate::error::{Error, Result};
use crate::numerics::{solve, symmetric_eigen, Matrix};

#[derive(Clone, Debug)]
pub struct RrrFit {
    /// Optimal `n_in x n_out` map of rank at most `rank`.
    pub weight: Matrix,
    /// Mean-per-sample squared residual attained by `weight`.
    pub loss: f64,
    /// Eigenvalues of `Σ_yx Σ_xx⁻¹ Σ_xy`, descending.
    pub eigenvalues: Vec<f64>,
    /// `√(Σ_{i>rank} λ_i)`: the distance between the rank-`rank` fit and the
    /// least-squares fit, measured as a root-mean-square prediction gap.
    pub truncation_error: f64,
    pub rank: usize,
}

pub fn rrr_best_fit(data: &RegressionData, rank: usize) -> Result<RrrFit> {
    let n_in = data.input_dim();
    let n_out = data.output_dim();
    if rank > n_in.min(n_out) {
        return Err(Error::invalid(format!(
            "rank {rank} exceeds min({n_in}, {n_out})"
        )));
    }
    let samples = data.samples() as f64;
    let sxx = data.x.t_matmul(&data.x).scale(1.0 / samples);
    let sxy = data.x.t_matmul(&data.y).scale(1.0 / samples);

    let (sxx_eigs, _) = symmetric_eigen(&sxx)?;
    let top = sxx_eigs.last().copied().unwrap_or(0.0);
    if !(sxx_eigs[0] > 1e-12 * top.max(f64::MIN_POSITIVE)) {
        return Err(Error::invalid("XᵀX is singular"));
    }
    let ols = solve(&sxx, &sxy)?;
    let m = sxy.t_matmul(&ols);
    let m = Matrix::from_fn(n_out, n_out, |i, j| 0.5 * (m[(i, j)] + m[(j, i)]));
    let (mut eigenvalues, vectors) = symmetric_eigen(&m)?;
    eigenvalues.reverse();
    let v = Matrix::from_fn(n_out, rank, |i, j| vectors[(i, n_out - 1 - j)]);

    let weight = ols.matmul(&v).matmul_t(&v);
    let loss = weight_loss(&weight, data)?;
    let discarded: f64 = eigenvalues[rank..].iter().map(|l| l.max(0.0)).sum();
    Ok(RrrFit {
        weight,
        loss,
        eigenvalues,
        truncation_error: discarded.sqrt(),
        rank,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::lora::DataRole;
    use crate::numerics::{gaussian_matrix, numerical_rank, RngStream};

    fn noiseless(true_rank: usize, seed: u64) -> RegressionData {
        let mut rng = RngStream::new(seed, 0);
        let w = gaussian_matrix(10, true_rank, 0.0, 1.0, &mut rng)
            .unwrap()
            .matmul(&gaussian_matrix(true_rank, 10, 0.0, 1.0, &mut rng).unwrap());
        let x = gaussian_matrix(200, 10, 0.0, 1.0, &mut rng).unwrap();
        let y = x.matmul(&w);
        RegressionData::new(x, y, DataRole::Train).unwrap()
    }

    #[test]
    fn exact_recovery_at_true_rank() {
        let data = noiseless(3, 1);
        let fit = rrr_best_fit(&data, 3).unwrap();
        assert!(fit.loss < 1e-20, "{}", fit.loss);
        assert_eq!(numerical_rank(&fit.weight).unwrap(), 3);
        let over = rrr_best_fit(&data, 5).unwrap();
        assert!(over.loss < 1e-20);
    }

    #[test]
    fn under_rank_leaves_error() {
        let data = noiseless(3, 2);
        assert!(rrr_best_fit(&data, 2).unwrap().loss > 0.0);
    }

    #[test]
    fn loss_non_increasing_in_rank() {
        let mut data = noiseless(4, 3);
        let mut rng = RngStream::new(3, 9);
        let noise = gaussian_matrix(200, 10, 0.0, 0.3, &mut rng).unwrap();
        data.y.add_scaled(&noise, 1.0).unwrap();
        let losses: Vec<f64> = (0..=10).map(|r| rrr_best_fit(&data, r).unwrap().loss).collect();
        for w in losses.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "{losses:?}");
        }
    }

    #[test]
    fn singular_design_rejected() {
        let x = Matrix::zeros(20, 3);
        let data = RegressionData::new(x, Matrix::zeros(20, 3), DataRole::Train).unwrap();
        assert!(matches!(rrr_best_fit(&data, 1), Err(Error::InvalidArgument(_))));
        let data = noiseless(2, 4);
        assert!(rrr_best_fit(&data, 11).is_err());
    }
}
