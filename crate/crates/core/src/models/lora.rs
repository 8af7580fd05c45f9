//! Two-level LoRA parameterization `W = W0 + B·A + D·C` on a linear
//! regression model, with its loss, gradients and mixed second derivative.
//!
//! The loss is the mean over samples of the squared residual row norm,
//! `‖X W − Y‖_F² / samples`. With `R = X W − Y` and `c = 2 / samples` the
//! gradient with respect to `W` is `G = c · Xᵀ R`, and the factor gradients
//! follow by the chain rule.

use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// Shared adapter `(B: m x r, A: r x n)`.
#[derive(Clone, Debug, PartialEq)]
pub struct CommonAdapter {
    pub b: Matrix,
    pub a: Matrix,
}

impl CommonAdapter {
    pub fn new(b: Matrix, a: Matrix) -> Result<Self> {
        if b.cols() != a.rows() {
            return Err(Error::invalid(format!(
                "common adapter: B is {}x{} but A is {}x{}",
                b.rows(),
                b.cols(),
                a.rows(),
                a.cols()
            )));
        }
        if b.cols() == 0 {
            return Err(Error::invalid("common adapter rank must be >= 1"));
        }
        Ok(Self { b, a })
    }

    pub fn zeros(m: usize, n: usize, rank: usize) -> Self {
        Self {
            b: Matrix::zeros(m, rank),
            a: Matrix::zeros(rank, n),
        }
    }

    pub fn rank(&self) -> usize {
        self.b.cols()
    }

    /// `(m, n)` of the product.
    pub fn output_shape(&self) -> (usize, usize) {
        (self.b.rows(), self.a.cols())
    }

    pub fn product(&self) -> Matrix {
        self.b.matmul(&self.a)
    }

    pub fn param_count(&self) -> usize {
        self.b.as_slice().len() + self.a.as_slice().len()
    }

    /// Flattens into `[B row-major, A row-major]`.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.param_count());
        v.extend_from_slice(self.b.as_slice());
        v.extend_from_slice(self.a.as_slice());
        v
    }

    /// Inverse of [`CommonAdapter::to_flat`] with the shapes of `self`.
    pub fn with_flat(&self, flat: &[f64]) -> Result<Self> {
        let nb = self.b.as_slice().len();
        if flat.len() != self.param_count() {
            return Err(Error::invalid("flat common adapter has the wrong length"));
        }
        Ok(Self {
            b: Matrix::new(self.b.rows(), self.b.cols(), flat[..nb].to_vec())?,
            a: Matrix::new(self.a.rows(), self.a.cols(), flat[nb..].to_vec())?,
        })
    }
}

/// Client-specific adapter `(D: m x r̃, C: r̃ x n)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ClientAdapter {
    pub d: Matrix,
    pub c: Matrix,
}

impl ClientAdapter {
    pub fn new(d: Matrix, c: Matrix) -> Result<Self> {
        if d.cols() != c.rows() {
            return Err(Error::invalid(format!(
                "client adapter: D is {}x{} but C is {}x{}",
                d.rows(),
                d.cols(),
                c.rows(),
                c.cols()
            )));
        }
        if d.cols() == 0 {
            return Err(Error::invalid("client adapter rank must be >= 1"));
        }
        Ok(Self { d, c })
    }

    pub fn rank(&self) -> usize {
        self.d.cols()
    }

    pub fn product(&self) -> Matrix {
        self.d.matmul(&self.c)
    }

    pub fn param_count(&self) -> usize {
        self.d.as_slice().len() + self.c.as_slice().len()
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.param_count());
        v.extend_from_slice(self.d.as_slice());
        v.extend_from_slice(self.c.as_slice());
        v
    }

    pub fn with_flat(&self, flat: &[f64]) -> Result<Self> {
        let nd = self.d.as_slice().len();
        if flat.len() != self.param_count() {
            return Err(Error::invalid("flat client adapter has the wrong length"));
        }
        Ok(Self {
            d: Matrix::new(self.d.rows(), self.d.cols(), flat[..nd].to_vec())?,
            c: Matrix::new(self.c.rows(), self.c.cols(), flat[nd..].to_vec())?,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DataRole {
    Train,
    Test,
}

/// Design matrix and targets of one client split.
#[derive(Clone, Debug, PartialEq)]
pub struct RegressionData {
    pub x: Matrix,
    pub y: Matrix,
    pub role: DataRole,
}

impl RegressionData {
    pub fn new(x: Matrix, y: Matrix, role: DataRole) -> Result<Self> {
        if x.rows() != y.rows() {
            return Err(Error::invalid(format!(
                "X has {} samples but Y has {}",
                x.rows(),
                y.rows()
            )));
        }
        Ok(Self { x, y, role })
    }

    pub fn samples(&self) -> usize {
        self.x.rows()
    }

    pub fn input_dim(&self) -> usize {
        self.x.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.y.cols()
    }

    /// Minibatch made of the given sample indices.
    pub fn select(&self, indices: &[usize]) -> RegressionData {
        RegressionData {
            x: self.x.select_rows(indices),
            y: self.y.select_rows(indices),
            role: self.role,
        }
    }
}

/// Gradients of [`lora_loss`] with respect to each factor.
#[derive(Clone, Debug, PartialEq)]
pub struct LoraGrads {
    pub b: Matrix,
    pub a: Matrix,
    /// Present when a client adapter takes part in the model.
    pub client: Option<(Matrix, Matrix)>,
}

fn check_shapes(
    w0: &Matrix,
    common: &CommonAdapter,
    client: Option<&ClientAdapter>,
    data: &RegressionData,
) -> Result<()> {
    let (m, n) = w0.shape();
    if common.output_shape() != (m, n) {
        return Err(Error::invalid(format!(
            "common adapter produces {:?}, frozen weight is {m}x{n}",
            common.output_shape()
        )));
    }
    if let Some(cl) = client {
        if (cl.d.rows(), cl.c.cols()) != (m, n) {
            return Err(Error::invalid("client adapter does not match the frozen weight"));
        }
        if cl.rank() >= common.rank() {
            return Err(Error::invalid(format!(
                "client rank {} must be below the common rank {}",
                cl.rank(),
                common.rank()
            )));
        }
    }
    if data.input_dim() != m || data.output_dim() != n {
        return Err(Error::invalid(format!(
            "data is {}->{}, weight is {m}x{n}",
            data.input_dim(),
            data.output_dim()
        )));
    }
    if data.samples() == 0 {
        return Err(Error::invalid("empty dataset"));
    }
    Ok(())
}

/// Effective weight `W0 + B·A (+ D·C)`.
pub fn effective_weight(
    w0: &Matrix,
    common: &CommonAdapter,
    client: Option<&ClientAdapter>,
) -> Matrix {
    let mut w = w0.clone();
    w.add_scaled(&common.product(), 1.0).expect("checked shapes");
    if let Some(cl) = client {
        w.add_scaled(&cl.product(), 1.0).expect("checked shapes");
    }
    w
}

/// Adapter contribution `B·A (+ D·C)` without the frozen weight.
pub fn adapter_sum(common: &CommonAdapter, client: Option<&ClientAdapter>) -> Matrix {
    let mut w = common.product();
    if let Some(cl) = client {
        w.add_scaled(&cl.product(), 1.0).expect("matching adapter shapes");
    }
    w
}

/// Mean-per-sample squared loss of a fixed weight.
pub fn weight_loss(w: &Matrix, data: &RegressionData) -> Result<f64> {
    let pred = data.x.checked_matmul(w)?;
    let r = pred.sub(&data.y)?;
    Ok(r.squared_frobenius() / data.samples() as f64)
}

pub fn lora_loss(
    w0: &Matrix,
    common: &CommonAdapter,
    client: Option<&ClientAdapter>,
    data: &RegressionData,
) -> Result<f64> {
    check_shapes(w0, common, client, data)?;
    weight_loss(&effective_weight(w0, common, client), data)
}

/// `c · Xᵀ R`, the gradient of the loss with respect to the full weight.
fn weight_gradient(w: &Matrix, data: &RegressionData) -> Matrix {
    let mut r = data.x.matmul(w);
    r.add_scaled(&data.y, -1.0).expect("checked shapes");
    data.x.t_matmul(&r).scale(2.0 / data.samples() as f64)
}

pub fn lora_grads(
    w0: &Matrix,
    common: &CommonAdapter,
    client: Option<&ClientAdapter>,
    data: &RegressionData,
) -> Result<LoraGrads> {
    check_shapes(w0, common, client, data)?;
    let g = weight_gradient(&effective_weight(w0, common, client), data);
    let grads = LoraGrads {
        b: g.matmul_t(&common.a),
        a: common.b.t_matmul(&g),
        client: client.map(|cl| (g.matmul_t(&cl.c), cl.d.t_matmul(&g))),
    };
    if !grads.b.is_finite() || !grads.a.is_finite() {
        return Err(Error::numeric("non-finite LoRA gradient"));
    }
    Ok(grads)
}

/// Mixed second derivative `∇_{xy} f · v` with `x = (B, A)` and
/// `y = (D, C)`, for a direction `v = (v_D, v_C)`.
///
/// `hv_B = c · XᵀX (v_D C + D v_C) Aᵀ`, `hv_A = c · Bᵀ XᵀX (v_D C + D v_C)`.
pub fn lora_cross_hvp(
    w0: &Matrix,
    common: &CommonAdapter,
    client: &ClientAdapter,
    data: &RegressionData,
    v_d: &Matrix,
    v_c: &Matrix,
) -> Result<(Matrix, Matrix)> {
    check_shapes(w0, common, Some(client), data)?;
    if v_d.shape() != client.d.shape() || v_c.shape() != client.c.shape() {
        return Err(Error::invalid("direction does not match the client adapter"));
    }
    let mut dir = v_d.matmul(&client.c);
    dir.add_scaled(&client.d.matmul(v_c), 1.0)?;
    let xdir = data.x.matmul(&dir);
    let h = data.x.t_matmul(&xdir).scale(2.0 / data.samples() as f64);
    Ok((h.matmul_t(&common.a), common.b.t_matmul(&h)))
}
