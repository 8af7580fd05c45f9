//! Closed-form quadratic bilevel problem
//!
//! `f(x, y) = ½ yᵀH y + yᵀ(P x + b) + ½ xᵀQ x`
//!
//! with `H` symmetric positive definite. The lower solution is
//! `y*(x) = −H⁻¹(P x + b)`, the reduced objective `Φ(x) = f(x, y*(x))` has
//! gradient `Q x + Pᵀ y*(x)` and constant Hessian `Q − PᵀH⁻¹P`, and the
//! mixed second derivative is `∇_{xy} f = Pᵀ`. All second derivatives are
//! constant, so the Hessian Lipschitz constant is zero.

use super::task::BilevelTask;
use crate::error::{Error, Result};
use crate::numerics::spectral::{column_space_basis, inverse, svd, symmetric_eigen};
use crate::numerics::vector::check_len;
use crate::numerics::{gaussian_matrix, Matrix, RngStream};

#[derive(Clone, Debug)]
pub struct QuadraticBilevel {
    h: Matrix,
    p: Matrix,
    q: Matrix,
    b: Vec<f64>,
    h_inv: Matrix,
    /// Smallest eigenvalue of `H`.
    mu: f64,
    /// Largest eigenvalue of the joint Hessian `[[Q, Pᵀ], [P, H]]`.
    smoothness: f64,
}

fn is_symmetric(m: &Matrix) -> bool {
    let scale = m.frobenius_norm().max(1.0);
    m.rows() == m.cols()
        && (0..m.rows()).all(|i| (0..i).all(|j| (m[(i, j)] - m[(j, i)]).abs() <= 1e-12 * scale))
}

fn mat_vec(m: &Matrix, v: &[f64]) -> Vec<f64> {
    (0..m.rows())
        .map(|i| m.row(i).iter().zip(v).map(|(a, b)| a * b).sum())
        .collect()
}

fn mat_t_vec(m: &Matrix, v: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; m.cols()];
    for (i, vi) in v.iter().enumerate() {
        for (o, a) in out.iter_mut().zip(m.row(i)) {
            *o += a * vi;
        }
    }
    out
}

/// Spectrum recipe for [`QuadraticBilevel::random`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QuadraticFamily {
    /// Eigenvalues of `H` are drawn uniformly from this range; the smallest is
    /// pinned to the lower end.
    pub lower_spectrum: (f64, f64),
    /// Spectral norm of the coupling `P`.
    pub coupling_norm: f64,
    /// Eigenvalues of the reduced Hessian `Q − PᵀH⁻¹P`.
    pub reduced_spectrum: (f64, f64),
}

impl QuadraticFamily {
    /// Well-conditioned coupled family used by the convergence harness.
    pub fn well_conditioned(mu: f64) -> Self {
        Self {
            lower_spectrum: (mu, 1.5 * mu),
            coupling_norm: 0.4 * mu,
            reduced_spectrum: (0.5 * mu, mu),
        }
    }

    /// Family whose joint Hessian is bounded by `smoothness` for any draw:
    /// the block-norm bound `max(‖Q‖, ‖H‖) + ‖P‖` stays below it.
    pub fn bounded(mu: f64, smoothness: f64) -> Result<Self> {
        if !(mu > 0.0) || !(smoothness >= mu) {
            return Err(Error::invalid(format!(
                "need 0 < mu <= L, got mu = {mu}, L = {smoothness}"
            )));
        }
        let coupling_norm = (mu * smoothness).sqrt() / 4.0;
        let reduced_hi = smoothness / 4.0;
        Ok(Self {
            lower_spectrum: (mu, (smoothness / 2.0).max(mu)),
            coupling_norm,
            reduced_spectrum: (reduced_hi / 2.0, reduced_hi),
        })
    }

    pub fn decoupled(self) -> Self {
        Self {
            coupling_norm: 0.0,
            ..self
        }
    }
}

fn random_orthogonal(n: usize, rng: &mut RngStream) -> Result<Matrix> {
    let g = gaussian_matrix(n, n, 0.0, 1.0, rng)?;
    column_space_basis(&g)
}

fn spectral_matrix(values: &[f64], rng: &mut RngStream) -> Result<Matrix> {
    let u = random_orthogonal(values.len(), rng)?;
    let scaled = Matrix::from_fn(u.rows(), u.cols(), |i, j| u[(i, j)] * values[j]);
    Ok(symmetrize(&scaled.matmul_t(&u)))
}

fn symmetrize(m: &Matrix) -> Matrix {
    Matrix::from_fn(m.rows(), m.cols(), |i, j| 0.5 * (m[(i, j)] + m[(j, i)]))
}

impl QuadraticBilevel {
    pub fn new(h: Matrix, p: Matrix, q: Matrix, b: Vec<f64>) -> Result<Self> {
        let ny = h.rows();
        let nx = q.rows();
        if h.shape() != (ny, ny) || q.shape() != (nx, nx) || p.shape() != (ny, nx) || b.len() != ny {
            return Err(Error::invalid("quadratic bilevel: inconsistent block shapes"));
        }
        if !is_symmetric(&h) || !is_symmetric(&q) {
            return Err(Error::invalid("quadratic bilevel: H and Q must be symmetric"));
        }
        let (h_eigs, _) = symmetric_eigen(&h)?;
        let mu = h_eigs[0];
        if !(mu > 0.0) {
            return Err(Error::invalid(format!(
                "quadratic bilevel: H must be positive definite (smallest eigenvalue {mu})"
            )));
        }
        let h_inv = inverse(&h)?;
        let joint = Matrix::from_fn(nx + ny, nx + ny, |i, j| match (i < nx, j < nx) {
            (true, true) => q[(i, j)],
            (true, false) => p[(j - nx, i)],
            (false, true) => p[(i - nx, j)],
            (false, false) => h[(i - nx, j - nx)],
        });
        let (joint_eigs, _) = symmetric_eigen(&joint)?;
        let smoothness = joint_eigs
            .iter()
            .fold(0.0f64, |acc, v| acc.max(v.abs()));
        Ok(Self {
            h,
            p,
            q,
            b,
            h_inv,
            mu,
            smoothness,
        })
    }

    /// Random instance with `n_x` upper and `n_y` lower coordinates.
    pub fn random(nx: usize, ny: usize, family: QuadraticFamily, rng: &mut RngStream) -> Result<Self> {
        if nx == 0 || ny == 0 {
            return Err(Error::invalid("quadratic bilevel needs n_x, n_y >= 1"));
        }
        let (lo, hi) = family.lower_spectrum;
        let mut h_vals: Vec<f64> = (0..ny).map(|_| rng.uniform_range(lo, hi)).collect();
        h_vals[0] = lo;
        let h = spectral_matrix(&h_vals, rng)?;

        let p = if family.coupling_norm > 0.0 {
            let g = gaussian_matrix(ny, nx, 0.0, 1.0, rng)?;
            let top = svd(&g)?.singular_values[0];
            g.scale(family.coupling_norm / top)
        } else {
            Matrix::zeros(ny, nx)
        };

        let (slo, shi) = family.reduced_spectrum;
        let s_vals: Vec<f64> = (0..nx).map(|_| rng.uniform_range(slo, shi)).collect();
        let s = spectral_matrix(&s_vals, rng)?;
        let h_inv = inverse(&h)?;
        let mut q = s;
        q.add_scaled(&p.t_matmul(&h_inv.matmul(&p)), 1.0)?;
        let q = symmetrize(&q);

        let b = (0..ny).map(|_| rng.standard_normal()).collect();
        Self::new(h, p, q, b)
    }

    pub fn upper_dim(&self) -> usize {
        self.q.rows()
    }

    pub fn lower_dim(&self) -> usize {
        self.h.rows()
    }

    /// Strong-convexity modulus of the lower problem.
    pub fn mu(&self) -> f64 {
        self.mu
    }

    /// Joint smoothness constant `L_{f,1}`.
    pub fn smoothness(&self) -> f64 {
        self.smoothness
    }

    pub fn coupling(&self) -> &Matrix {
        &self.p
    }

    /// Hessian of `Φ`, `Q − PᵀH⁻¹P`.
    pub fn reduced_hessian(&self) -> Matrix {
        let mut s = self.q.clone();
        s.add_scaled(&self.p.t_matmul(&self.h_inv.matmul(&self.p)), -1.0)
            .expect("square blocks");
        s
    }

    /// Stationary point of `Φ` (requires a nonsingular reduced Hessian).
    pub fn phi_minimizer(&self) -> Result<Vec<f64>> {
        let rhs = mat_t_vec(&self.p, &mat_vec(&self.h_inv, &self.b));
        let x = crate::numerics::solve(&self.reduced_hessian(), &Matrix::column(&rhs))?;
        Ok(x.into_vec())
    }

    pub fn lower_solution(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len(x.len(), self.upper_dim(), "x")?;
        let mut rhs = mat_vec(&self.p, x);
        for (r, b) in rhs.iter_mut().zip(&self.b) {
            *r += b;
        }
        Ok(mat_vec(&self.h_inv, &rhs).into_iter().map(|v| -v).collect())
    }

    fn value(&self, x: &[f64], y: &[f64]) -> f64 {
        let hy = mat_vec(&self.h, y);
        let px = mat_vec(&self.p, x);
        let qx = mat_vec(&self.q, x);
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(u, v)| u * v).sum::<f64>();
        0.5 * dot(y, &hy) + y.iter().zip(px.iter().zip(&self.b)).map(|(yi, (pi, bi))| yi * (pi + bi)).sum::<f64>()
            + 0.5 * dot(x, &qx)
    }
}

/// Exact `Φ(x)` and `∇Φ(x)`.
pub fn quadratic_phi_and_grad(q: &QuadraticBilevel, x: &[f64]) -> Result<(f64, Vec<f64>)> {
    let y_star = q.lower_solution(x)?;
    let phi = q.value(x, &y_star);
    let mut grad = mat_vec(&q.q, x);
    for (g, v) in grad.iter_mut().zip(mat_t_vec(&q.p, &y_star)) {
        *g += v;
    }
    Ok((phi, grad))
}

impl BilevelTask for QuadraticBilevel {
    fn upper_dim(&self) -> usize {
        QuadraticBilevel::upper_dim(self)
    }

    fn lower_dim(&self) -> usize {
        QuadraticBilevel::lower_dim(self)
    }

    fn loss(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        check_len(x.len(), self.upper_dim(), "x")?;
        check_len(y.len(), self.lower_dim(), "y")?;
        Ok(self.value(x, y))
    }

    fn grad_x(&self, x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
        check_len(x.len(), self.upper_dim(), "x")?;
        check_len(y.len(), self.lower_dim(), "y")?;
        let mut g = mat_vec(&self.q, x);
        for (gi, v) in g.iter_mut().zip(mat_t_vec(&self.p, y)) {
            *gi += v;
        }
        Ok(g)
    }

    fn grad_y(&self, x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
        check_len(x.len(), self.upper_dim(), "x")?;
        check_len(y.len(), self.lower_dim(), "y")?;
        let hy = mat_vec(&self.h, y);
        let px = mat_vec(&self.p, x);
        Ok(hy
            .iter()
            .zip(px.iter().zip(&self.b))
            .map(|(a, (p, b))| a + p + b)
            .collect())
    }

    fn cross_hvp(&self, x: &[f64], y: &[f64], v: &[f64]) -> Result<Vec<f64>> {
        check_len(x.len(), self.upper_dim(), "x")?;
        check_len(y.len(), self.lower_dim(), "y")?;
        check_len(v.len(), self.lower_dim(), "v")?;
        Ok(mat_t_vec(&self.p, v))
    }

    fn exact_lower_solution(&self, x: &[f64]) -> Option<Result<Vec<f64>>> {
        Some(self.lower_solution(x))
    }

    fn exact_phi_gradient(&self, x: &[f64]) -> Option<Result<Vec<f64>>> {
        Some(quadratic_phi_and_grad(self, x).map(|(_, g)| g))
    }
}
