//! Abstract bilevel objective `f(x, y)` over flat parameter vectors, plus the
//! central-difference derivative oracles used to check analytic derivatives.

use super::lora::{lora_cross_hvp, lora_grads, lora_loss, ClientAdapter, CommonAdapter, RegressionData};
use crate::error::{Error, Result};
use crate::numerics::vector::{add_scaled, all_finite, check_len};
use crate::numerics::Matrix;

/// Default step for finite-difference gradients.
pub const FD_GRAD_STEP: f64 = 1e-5;
/// Default step for finite-difference Hessian-vector products.
pub const FD_HVP_STEP: f64 = 1e-4;

/// Differentiable objective `f(x, y)` with an upper variable `x` and a lower
/// variable `y`.
pub trait BilevelTask {
    fn upper_dim(&self) -> usize;
    fn lower_dim(&self) -> usize;
    fn loss(&self, x: &[f64], y: &[f64]) -> Result<f64>;
    fn grad_x(&self, x: &[f64], y: &[f64]) -> Result<Vec<f64>>;
    fn grad_y(&self, x: &[f64], y: &[f64]) -> Result<Vec<f64>>;
    /// `∇_{xy} f(x, y) · v` for `v` shaped like `y`; the result is shaped like `x`.
    fn cross_hvp(&self, x: &[f64], y: &[f64], v: &[f64]) -> Result<Vec<f64>>;

    /// `y*(x)` when the lower problem has a closed form.
    fn exact_lower_solution(&self, _x: &[f64]) -> Option<Result<Vec<f64>>> {
        None
    }

    /// `∇Φ(x)` for `Φ(x) = f(x, y*(x))` when available in closed form.
    fn exact_phi_gradient(&self, _x: &[f64]) -> Option<Result<Vec<f64>>> {
        None
    }
}

fn central_difference(
    dim: usize,
    step: f64,
    mut eval: impl FnMut(usize, f64) -> Result<f64>,
) -> Result<Vec<f64>> {
    (0..dim)
        .map(|i| {
            let plus = eval(i, step)?;
            let minus = eval(i, -step)?;
            Ok((plus - minus) / (2.0 * step))
        })
        .collect()
}

/// Central-difference estimate of `∇_x f`.
pub fn grad_x_fd<T: BilevelTask + ?Sized>(task: &T, x: &[f64], y: &[f64], step: f64) -> Result<Vec<f64>> {
    let mut probe = x.to_vec();
    central_difference(x.len(), step, |i, h| {
        let saved = probe[i];
        probe[i] = saved + h;
        let v = task.loss(&probe, y);
        probe[i] = saved;
        v
    })
}

/// Central-difference estimate of `∇_y f`.
pub fn grad_y_fd<T: BilevelTask + ?Sized>(task: &T, x: &[f64], y: &[f64], step: f64) -> Result<Vec<f64>> {
    let mut probe = y.to_vec();
    central_difference(y.len(), step, |i, h| {
        let saved = probe[i];
        probe[i] = saved + h;
        let v = task.loss(x, &probe);
        probe[i] = saved;
        v
    })
}

/// `(∇_x f(x, y + s·v) − ∇_x f(x, y − s·v)) / (2s)`, an estimate of
/// `∇_{xy} f(x, y) · v`.
pub fn cross_hvp_fd<T: BilevelTask + ?Sized>(
    task: &T,
    x: &[f64],
    y: &[f64],
    v: &[f64],
    step: f64,
) -> Result<Vec<f64>> {
    if !(step > 0.0) {
        return Err(Error::invalid("finite-difference step must be positive"));
    }
    check_len(v.len(), y.len(), "cross_hvp_fd direction")?;
    let plus = task.grad_x(x, &add_scaled(y, step, v))?;
    let minus = task.grad_x(x, &add_scaled(y, -step, v))?;
    let out: Vec<f64> = plus
        .iter()
        .zip(&minus)
        .map(|(p, m)| (p - m) / (2.0 * step))
        .collect();
    if !all_finite(&out) {
        return Err(Error::numeric("non-finite finite-difference HVP"));
    }
    Ok(out)
}

/// The two-level LoRA regression loss on one batch, viewed as `f(x, y)` with
/// `x = [B, A]` and `y = [D, C]` flattened row-major.
#[derive(Clone, Copy, Debug)]
pub struct LoraTask<'a> {
    pub w0: &'a Matrix,
    pub data: &'a RegressionData,
    pub rank: usize,
    pub client_rank: usize,
}

impl<'a> LoraTask<'a> {
    pub fn new(w0: &'a Matrix, data: &'a RegressionData, rank: usize, client_rank: usize) -> Self {
        Self {
            w0,
            data,
            rank,
            client_rank,
        }
    }

    pub fn unpack_common(&self, x: &[f64]) -> Result<CommonAdapter> {
        let (m, n) = self.w0.shape();
        check_len(x.len(), (m + n) * self.rank, "upper variable")?;
        let split = m * self.rank;
        CommonAdapter::new(
            Matrix::new(m, self.rank, x[..split].to_vec())?,
            Matrix::new(self.rank, n, x[split..].to_vec())?,
        )
    }

    pub fn unpack_client(&self, y: &[f64]) -> Result<ClientAdapter> {
        let (m, n) = self.w0.shape();
        check_len(y.len(), (m + n) * self.client_rank, "lower variable")?;
        let split = m * self.client_rank;
        ClientAdapter::new(
            Matrix::new(m, self.client_rank, y[..split].to_vec())?,
            Matrix::new(self.client_rank, n, y[split..].to_vec())?,
        )
    }

    fn unpack(&self, x: &[f64], y: &[f64]) -> Result<(CommonAdapter, ClientAdapter)> {
        Ok((self.unpack_common(x)?, self.unpack_client(y)?))
    }
}

fn concat(a: &Matrix, b: &Matrix) -> Vec<f64> {
    let mut v = Vec::with_capacity(a.as_slice().len() + b.as_slice().len());
    v.extend_from_slice(a.as_slice());
    v.extend_from_slice(b.as_slice());
    v
}

impl BilevelTask for LoraTask<'_> {
    fn upper_dim(&self) -> usize {
        let (m, n) = self.w0.shape();
        (m + n) * self.rank
    }

    fn lower_dim(&self) -> usize {
        let (m, n) = self.w0.shape();
        (m + n) * self.client_rank
    }

    fn loss(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        let (common, client) = self.unpack(x, y)?;
        lora_loss(self.w0, &common, Some(&client), self.data)
    }

    fn grad_x(&self, x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
        let (common, client) = self.unpack(x, y)?;
        let g = lora_grads(self.w0, &common, Some(&client), self.data)?;
        Ok(concat(&g.b, &g.a))
    }

    fn grad_y(&self, x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
        let (common, client) = self.unpack(x, y)?;
        let g = lora_grads(self.w0, &common, Some(&client), self.data)?;
        let (gd, gc) = g.client.expect("client adapter present");
        Ok(concat(&gd, &gc))
    }

    fn cross_hvp(&self, x: &[f64], y: &[f64], v: &[f64]) -> Result<Vec<f64>> {
        let (common, client) = self.unpack(x, y)?;
        let dir = self.unpack_client(v)?;
        let (hb, ha) = lora_cross_hvp(self.w0, &common, &client, self.data, &dir.d, &dir.c)?;
        Ok(concat(&hb, &ha))
    }
}
