//! Spectral utilities: SVD, effective rank, symmetric eigen-decomposition and
//! orthogonal-complement sampling.

use nalgebra::{SymmetricEigen, SVD};

use super::rng::{gaussian_matrix, RngStream};
use super::Matrix;
use crate::error::{Error, Result};

/// Singular values at or below this fraction of the largest one count as zero.
pub const RANK_RELATIVE_TOLERANCE: f64 = 1e-10;

/// Thin singular value decomposition `M = U diag(σ) Vᵀ`.
#[derive(Clone, Debug)]
pub struct SvdResult {
    /// Descending, non-negative.
    pub singular_values: Vec<f64>,
    /// `rows x k` with `k = min(rows, cols)`.
    pub left_vectors: Matrix,
    /// `cols x k`.
    pub right_vectors: Matrix,
}

impl SvdResult {
    pub fn reconstruct(&self) -> Matrix {
        let k = self.singular_values.len();
        let us = Matrix::from_fn(self.left_vectors.rows(), k, |i, j| {
            self.left_vectors[(i, j)] * self.singular_values[j]
        });
        us.matmul_t(&self.right_vectors)
    }

    /// Number of singular values above `RANK_RELATIVE_TOLERANCE · σ_max`.
    pub fn numerical_rank(&self) -> usize {
        let max = self.singular_values.first().copied().unwrap_or(0.0);
        if max == 0.0 {
            return 0;
        }
        self.singular_values
            .iter()
            .filter(|&&s| s > RANK_RELATIVE_TOLERANCE * max)
            .count()
    }
}

fn ensure_finite(m: &Matrix, op: &str) -> Result<()> {
    if m.is_empty() {
        return Err(Error::invalid(format!("{op}: empty matrix")));
    }
    if !m.is_finite() {
        return Err(Error::invalid(format!("{op}: non-finite entries")));
    }
    Ok(())
}

pub fn svd(m: &Matrix) -> Result<SvdResult> {
    ensure_finite(m, "svd")?;
    let decomposition = SVD::try_new(m.to_dmatrix(), true, true, f64::EPSILON, 0)
        .ok_or_else(|| Error::numeric("svd did not converge"))?;
    let u = decomposition.u.expect("requested U");
    let v_t = decomposition.v_t.expect("requested Vᵀ");
    let sigma = decomposition.singular_values;

    let mut order: Vec<usize> = (0..sigma.len()).collect();
    order.sort_by(|&a, &b| sigma[b].total_cmp(&sigma[a]));

    let singular_values = order.iter().map(|&i| sigma[i].max(0.0)).collect();
    let left_vectors = Matrix::from_fn(m.rows(), order.len(), |i, j| u[(i, order[j])]);
    let right_vectors = Matrix::from_fn(m.cols(), order.len(), |i, j| v_t[(order[j], i)]);
    Ok(SvdResult {
        singular_values,
        left_vectors,
        right_vectors,
    })
}

/// Smallest `j` whose top-`j` singular values hold at least `threshold` of
/// the singular-value sum. The zero matrix has effective rank 0.
pub fn effective_rank(m: &Matrix, threshold: f64) -> Result<usize> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(Error::invalid(format!(
            "effective_rank threshold must lie in (0, 1], got {threshold}"
        )));
    }
    let sv = svd(m)?.singular_values;
    let max = sv.first().copied().unwrap_or(0.0);
    if max == 0.0 {
        return Ok(0);
    }
    let floor = RANK_RELATIVE_TOLERANCE * max;
    let kept: Vec<f64> = sv.into_iter().filter(|&s| s > floor).collect();
    Ok(cumulative_share_rank(&kept, threshold))
}

/// Shared by [`effective_rank`] and tests: smallest prefix of a descending
/// sequence reaching `threshold` of its total.
pub fn cumulative_share_rank(descending: &[f64], threshold: f64) -> usize {
    let total: f64 = descending.iter().sum();
    if total <= 0.0 {
        return 0;
    }
    let target = threshold * total;
    let mut running = 0.0;
    for (j, s) in descending.iter().enumerate() {
        running += s;
        if running >= target {
            return j + 1;
        }
    }
    // Rounding can leave the full sum a hair below `threshold * total` when
    // threshold == 1.
    descending.len()
}

pub fn numerical_rank(m: &Matrix) -> Result<usize> {
    Ok(svd(m)?.numerical_rank())
}

/// `‖Mhat − Mstar‖_F`.
pub fn frobenius_distance(mhat: &Matrix, mstar: &Matrix) -> Result<f64> {
    Ok(mhat.sub(mstar)?.frobenius_norm())
}

/// Orthonormal basis (as columns) of the column space of `m`.
pub fn column_space_basis(m: &Matrix) -> Result<Matrix> {
    let s = svd(m)?;
    let rank = s.numerical_rank();
    Ok(s.left_vectors.block(0..m.rows(), 0..rank))
}

/// Gaussian draw projected onto the orthogonal complement of the columns of
/// `basis` (which must be orthonormal). Two Gram–Schmidt passes.
fn project_out(mut g: Matrix, basis: &Matrix) -> Matrix {
    if basis.cols() == 0 {
        return g;
    }
    for _ in 0..2 {
        let coeffs = basis.t_matmul(&g);
        let proj = basis.matmul(&coeffs);
        g.add_scaled(&proj, -1.0).expect("same shape");
    }
    g
}

/// Samples a rank-`out_rank` pair `(D, C)` with the columns of `D`
/// orthogonal to the column space of `colspace_of` (an `m x r` factor) and
/// the rows of `C` orthogonal to the row space of `rowspace_of` (an `r x n`
/// factor). `D` is drawn before `C`.
pub fn orthogonal_complement_sample(
    rowspace_of: &Matrix,
    colspace_of: &Matrix,
    out_rank: usize,
    rng: &mut RngStream,
) -> Result<(Matrix, Matrix)> {
    let m = colspace_of.rows();
    let n = rowspace_of.cols();
    let col_basis = column_space_basis(colspace_of)?;
    let row_basis = column_space_basis(&rowspace_of.transpose())?;
    let col_room = m - col_basis.cols();
    let row_room = n - row_basis.cols();
    if out_rank > col_room || out_rank > row_room {
        return Err(Error::invalid(format!(
            "orthogonal complement has dimensions ({col_room}, {row_room}), cannot host rank {out_rank}"
        )));
    }
    if out_rank == 0 {
        return Ok((Matrix::zeros(m, 0), Matrix::zeros(0, n)));
    }
    let d = project_out(gaussian_matrix(m, out_rank, 0.0, 1.0, rng)?, &col_basis);
    let c_t = project_out(gaussian_matrix(n, out_rank, 0.0, 1.0, rng)?, &row_basis);
    Ok((d, c_t.transpose()))
}

/// Eigenvalues (ascending) and matching eigenvectors (as columns) of a
/// symmetric matrix.
pub fn symmetric_eigen(m: &Matrix) -> Result<(Vec<f64>, Matrix)> {
    ensure_finite(m, "symmetric_eigen")?;
    if m.rows() != m.cols() {
        return Err(Error::invalid("symmetric_eigen needs a square matrix"));
    }
    let eig = SymmetricEigen::new(m.to_dmatrix());
    let mut order: Vec<usize> = (0..m.rows()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = Matrix::from_fn(m.rows(), m.rows(), |i, j| eig.eigenvectors[(i, order[j])]);
    Ok((values, vectors))
}

/// Solves `A X = B` for square `A` via LU with partial pivoting.
pub fn solve(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    ensure_finite(a, "solve")?;
    if a.rows() != a.cols() || a.rows() != b.rows() {
        return Err(Error::invalid("solve: incompatible shapes"));
    }
    let lu = a.to_dmatrix().lu();
    let x = lu
        .solve(&b.to_dmatrix())
        .ok_or_else(|| Error::invalid("solve: singular matrix"))?;
    let out = Matrix::from_dmatrix(&x);
    if !out.is_finite() {
        return Err(Error::invalid("solve: singular matrix"));
    }
    Ok(out)
}

pub fn inverse(a: &Matrix) -> Result<Matrix> {
    solve(a, &Matrix::identity(a.rows()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_and_diagonal() {
        let s = svd(&Matrix::identity(3)).unwrap();
        assert_eq!(s.singular_values.len(), 3);
        for v in &s.singular_values {
            assert!((v - 1.0).abs() < 1e-14);
        }
        let s = svd(&Matrix::diag(&[1.0, 3.0, 2.0])).unwrap();
        for (got, want) in s.singular_values.iter().zip([3.0, 2.0, 1.0]) {
            assert!((got - want).abs() < 1e-14);
        }
    }

    #[test]
    fn svd_rejects_non_finite() {
        let mut m = Matrix::identity(2);
        m[(0, 1)] = f64::NAN;
        assert!(matches!(svd(&m), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn effective_rank_hand_example() {
        let m = Matrix::diag(&[5.0, 4.0, 3.0, 0.0, 0.0]);
        assert_eq!(effective_rank(&m, 0.9).unwrap(), 3);
        assert_eq!(cumulative_share_rank(&[5.0, 4.0, 3.0, 0.0], 0.9), 3);
    }

    #[test]
    fn effective_rank_zero_and_bad_threshold() {
        assert_eq!(effective_rank(&Matrix::zeros(4, 3), 0.9).unwrap(), 0);
        assert!(effective_rank(&Matrix::identity(2), 0.0).is_err());
        assert!(effective_rank(&Matrix::identity(2), 1.5).is_err());
        assert_eq!(effective_rank(&Matrix::identity(4), 1.0).unwrap(), 4);
    }

    #[test]
    fn frobenius_distance_examples() {
        let m = Matrix::from_fn(3, 3, |i, j| (i * j) as f64);
        assert_eq!(frobenius_distance(&m, &m).unwrap(), 0.0);
        let d = frobenius_distance(&Matrix::zeros(2, 2), &Matrix::filled(2, 2, 1.0)).unwrap();
        assert_eq!(d, 2.0);
        assert!(frobenius_distance(&Matrix::zeros(2, 2), &Matrix::zeros(2, 3)).is_err());
    }

    #[test]
    fn complement_of_zero_rank_request() {
        let mut rng = RngStream::new(1, 1);
        let b = gaussian_matrix(10, 4, 0.0, 1.0, &mut rng).unwrap();
        let a = gaussian_matrix(4, 10, 0.0, 1.0, &mut rng).unwrap();
        let (d, c) = orthogonal_complement_sample(&a, &b, 0, &mut rng).unwrap();
        assert_eq!(d.shape(), (10, 0));
        assert_eq!(c.shape(), (0, 10));
        assert_eq!(d.matmul(&c), Matrix::zeros(10, 10));
    }

    #[test]
    fn complement_too_small() {
        let mut rng = RngStream::new(1, 1);
        let b = gaussian_matrix(5, 4, 0.0, 1.0, &mut rng).unwrap();
        let a = gaussian_matrix(4, 10, 0.0, 1.0, &mut rng).unwrap();
        assert!(orthogonal_complement_sample(&a, &b, 2, &mut rng).is_err());
    }

    #[test]
    fn solve_and_inverse() {
        let a = Matrix::new(2, 2, vec![4.0, 1.0, 2.0, 3.0]).unwrap();
        let inv = inverse(&a).unwrap();
        let eye = a.matmul(&inv);
        assert!(eye.sub(&Matrix::identity(2)).unwrap().frobenius_norm() < 1e-14);
        assert!(inverse(&Matrix::zeros(2, 2)).is_err());
    }

    #[test]
    fn symmetric_eigen_sorted() {
        let m = Matrix::new(2, 2, vec![2.0, 1.0, 1.0, 2.0]).unwrap();
        let (vals, vecs) = symmetric_eigen(&m).unwrap();
        assert!((vals[0] - 1.0).abs() < 1e-14 && (vals[1] - 3.0).abs() < 1e-14);
        let v = Matrix::column(&vecs.col(1));
        let mv = m.matmul(&v);
        assert!(mv.sub(&v.scale(3.0)).unwrap().frobenius_norm() < 1e-12);
    }
}
