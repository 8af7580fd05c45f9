//! Deterministic single-machine bilevel iteration with the step sizes from the
//! convergence theorem, plus the per-step lemma quantities that make its
//! guarantees checkable on quadratics.
//!
//! Each step runs
//!
//! ```text
//! y⁺ = y − α ∇_y f(x, y)
//! x⁺ = x − η [∇_x f(x, y⁺) − α ∇_{xy} f(x, y) ∇_y f(x, y⁺)]
//! ```
//!
//! with full gradients.

use super::bilevel::{bilevel_local_step, BilevelBatches, BilevelStepConfig};
use super::UpperOptimizer;
use crate::error::{Error, Result};
use crate::models::quadratic::{quadratic_phi_and_grad, QuadraticBilevel};
use crate::numerics::vector::{check_len, norm, sub};

/// Step sizes and auxiliary constants derived from `(μ, L)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TheoremConstants {
    pub mu: f64,
    pub smoothness: f64,
    /// Lower rate `1 / (4L)`.
    pub alpha: f64,
    /// `L + L²/μ`.
    pub l_phi: f64,
    /// `25 L⁴ (4L/μ + 1) / (16 μ²)`.
    pub n: f64,
    /// The four bounds whose minimum is the upper rate.
    pub eta_candidates: [f64; 4],
    pub eta: f64,
}

impl TheoremConstants {
    pub fn new(mu: f64, smoothness: f64) -> Result<Self> {
        if !(mu > 0.0) || !mu.is_finite() || !(smoothness >= mu) || !smoothness.is_finite() {
            return Err(Error::invalid(format!(
                "need 0 < mu <= L, got mu = {mu}, L = {smoothness}"
            )));
        }
        let l = smoothness;
        let alpha = 1.0 / (4.0 * l);
        let l_phi = l + l * l / mu;
        let n = 25.0 * l.powi(4) * (4.0 * l / mu + 1.0) / (16.0 * mu * mu);
        let eta_candidates = [
            mu * mu / (5.0 * l.powi(3) * (4.0 * l / mu - mu / (4.0 * l)).sqrt()),
            1.0 / (8.0 * l_phi),
            (1.0 / (16.0 * n)).sqrt(),
            (1.0 / (81.0 * n * l_phi)).cbrt(),
        ];
        let eta = eta_candidates.iter().copied().fold(f64::INFINITY, f64::min);
        Ok(Self {
            mu,
            smoothness,
            alpha,
            l_phi,
            n,
            eta_candidates,
            eta,
        })
    }

    pub fn for_problem(q: &QuadraticBilevel) -> Result<Self> {
        Self::new(q.mu(), q.smoothness())
    }

    /// `√(1 − αμ)`, the per-step lower-level contraction factor.
    pub fn contraction_factor(&self) -> f64 {
        (1.0 - self.alpha * self.mu).sqrt()
    }

    /// `L (αL + 1) √(1 − αμ)`, the hypergradient-bias constant.
    pub fn bias_factor(&self) -> f64 {
        let l = self.smoothness;
        l * (self.alpha * l + 1.0) * self.contraction_factor()
    }
}

/// State at the start of step `step` and the lemma quantities of the update
/// taken from it.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceRow {
    pub step: usize,
    pub x: Vec<f64>,
    pub phi: f64,
    pub grad_phi_sq: f64,
    /// `‖y − y*(x)‖` before the lower step.
    pub lower_error: f64,
    /// `‖y⁺ − y*(x)‖` and its bound `√(1 − αμ)‖y − y*(x)‖`.
    pub contraction_lhs: f64,
    pub contraction_rhs: f64,
    /// `‖h − ∇Φ(x)‖` and its bound `L(αL + 1)√(1 − αμ)‖y − y*(x)‖`.
    pub bias_lhs: f64,
    pub bias_rhs: f64,
}

/// Absolute slack for the lemma comparisons: a few ulps of the magnitudes
/// involved, so that iterates sitting on the fixed point do not register
/// roundoff as a violation.
fn roundoff_slack(scale: f64) -> f64 {
    64.0 * f64::EPSILON * (1.0 + scale)
}

impl TraceRow {
    pub fn contraction_holds(&self, scale: f64) -> bool {
        self.contraction_lhs <= self.contraction_rhs + roundoff_slack(scale)
    }

    pub fn bias_holds(&self, scale: f64) -> bool {
        self.bias_lhs <= self.bias_rhs + roundoff_slack(scale)
    }
}

/// Runs `steps` iterations with the constants of `q`.
pub fn deterministic_bilevel_run(
    q: &QuadraticBilevel,
    x0: &[f64],
    y0: &[f64],
    steps: usize,
) -> Result<Vec<TraceRow>> {
    let constants = TheoremConstants::for_problem(q)?;
    deterministic_bilevel_run_with(q, x0, y0, steps, &constants)
}

/// As [`deterministic_bilevel_run`] with explicit constants.
pub fn deterministic_bilevel_run_with(
    q: &QuadraticBilevel,
    x0: &[f64],
    y0: &[f64],
    steps: usize,
    constants: &TheoremConstants,
) -> Result<Vec<TraceRow>> {
    if steps == 0 {
        return Err(Error::invalid("deterministic run needs T >= 1"));
    }
    check_len(x0.len(), q.upper_dim(), "x0")?;
    check_len(y0.len(), q.lower_dim(), "y0")?;

    let cfg = BilevelStepConfig::new(constants.alpha);
    let mut upper = UpperOptimizer::Sgd {
        rate: constants.eta,
    };
    let batches = BilevelBatches::exact(q);
    let contraction = constants.contraction_factor();
    let bias = constants.bias_factor();

    let mut x = x0.to_vec();
    let mut y = y0.to_vec();
    let mut trace = Vec::with_capacity(steps);
    for step in 0..steps {
        let (phi, grad_phi) = quadratic_phi_and_grad(q, &x)?;
        let y_star = q.lower_solution(&x)?;
        let lower_error = norm(&sub(&y, &y_star));
        let x_before = x.clone();

        let diag = bilevel_local_step(&batches, &mut x, &mut y, &cfg, &mut upper)?;

        let row = TraceRow {
            step,
            x: x_before,
            phi,
            grad_phi_sq: grad_phi.iter().map(|g| g * g).sum(),
            lower_error,
            contraction_lhs: norm(&sub(&y, &y_star)),
            contraction_rhs: contraction * lower_error,
            bias_lhs: norm(&sub(&diag.hypergradient, &grad_phi)),
            bias_rhs: bias * lower_error,
        };
        if !row.phi.is_finite() || !row.grad_phi_sq.is_finite() {
            return Err(Error::numeric(format!("divergence at step {step}")));
        }
        trace.push(row);
    }
    Ok(trace)
}

/// Mean of `‖∇Φ‖²` over the whole trace divided by its mean over the first
/// `head` rows.
pub fn decay_ratio(trace: &[TraceRow], head: usize) -> Result<f64> {
    if head == 0 || head > trace.len() {
        return Err(Error::invalid(format!(
            "head {head} outside 1..={}",
            trace.len()
        )));
    }
    let mean = |rows: &[TraceRow]| rows.iter().map(|r| r.grad_phi_sq).sum::<f64>() / rows.len() as f64;
    Ok(mean(trace) / mean(&trace[..head]))
}
