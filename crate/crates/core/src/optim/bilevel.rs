//! Single-loop bilevel step.
//!
//! One call performs a lower-level SGD step on `y` and an upper-level step on
//! `x` along the hypergradient estimate
//!
//! `h = ∇_x F(x, y⁺; ξ) − α · ∇_{xy} F(x, y; ζ) · ∇_y F(x, y⁺; ξ̃)`
//!
//! where `y⁺` is the updated lower variable. The estimate is the derivative
//! of `x ↦ f(x, y − α∇_y f(x, y))`, so at an exact lower solution it equals
//! the true hypergradient `∇_x f(x, y*(x))`.

use serde::{Deserialize, Serialize};

use super::{sgd_step, UpperOptimizer};
use crate::error::{Error, Result};
use crate::models::task::{cross_hvp_fd, BilevelTask, FD_HVP_STEP};
use crate::numerics::vector::{all_finite, axpy, check_len, norm};

/// How the mixed second derivative is evaluated.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HvpMode {
    #[default]
    Analytic,
    FiniteDifference,
}

/// Lower iterate used inside the mixed-derivative term.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IndexPattern {
    /// `∇_{xy} F` at the pre-update iterate `y`.
    #[default]
    Current,
    /// `∇_{xy} F` at the post-update iterate `y⁺`.
    Updated,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BilevelStepConfig {
    /// Lower-level SGD rate α.
    pub lower_rate: f64,
    pub hvp_mode: HvpMode,
    pub hvp_step: f64,
    pub index_pattern: IndexPattern,
    /// Lower SGD steps per upper step.
    pub lower_steps: usize,
}

impl BilevelStepConfig {
    pub fn new(lower_rate: f64) -> Self {
        Self {
            lower_rate,
            hvp_mode: HvpMode::Analytic,
            hvp_step: FD_HVP_STEP,
            index_pattern: IndexPattern::Current,
            lower_steps: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lower_rate >= 0.0) || !self.lower_rate.is_finite() {
            return Err(Error::invalid("lower rate must be a finite non-negative number"));
        }
        if !(self.hvp_step > 0.0) {
            return Err(Error::invalid("hvp step must be positive"));
        }
        if self.lower_steps == 0 {
            return Err(Error::invalid("lower_steps must be >= 1"));
        }
        Ok(())
    }
}

/// The four independent batches of one step, each presented as a task
/// evaluated on that batch: `lower` (π) drives the lower step, `upper` (ξ)
/// the direct gradient, `upper_tilde` (ξ̃) the lower gradient inside the
/// correction and `cross` (ζ) the mixed derivative.
#[derive(Clone, Copy, Debug)]
pub struct BilevelBatches<'a, T: ?Sized> {
    pub lower: &'a T,
    pub upper: &'a T,
    pub upper_tilde: &'a T,
    pub cross: &'a T,
}

impl<'a, T: ?Sized> BilevelBatches<'a, T> {
    /// Deterministic setting: every batch is the full objective.
    pub fn exact(task: &'a T) -> Self {
        Self {
            lower: task,
            upper: task,
            upper_tilde: task,
            cross: task,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepDiagnostics {
    /// The estimate `h` fed to the upper optimizer.
    pub hypergradient: Vec<f64>,
    pub hypergrad_norm: f64,
    /// `‖∇_y F(x, y; π)‖` before the lower step.
    pub lower_grad_norm: f64,
}

/// `h` for a given pre-update `y` and post-update `y_next`.
pub fn hypergradient_estimate<T: BilevelTask + ?Sized>(
    batches: &BilevelBatches<'_, T>,
    x: &[f64],
    y: &[f64],
    y_next: &[f64],
    cfg: &BilevelStepConfig,
) -> Result<Vec<f64>> {
    let mut h = batches.upper.grad_x(x, y_next)?;
    if cfg.lower_rate != 0.0 {
        let v = batches.upper_tilde.grad_y(x, y_next)?;
        let at = match cfg.index_pattern {
            IndexPattern::Current => y,
            IndexPattern::Updated => y_next,
        };
        let correction = match cfg.hvp_mode {
            HvpMode::Analytic => batches.cross.cross_hvp(x, at, &v)?,
            HvpMode::FiniteDifference => cross_hvp_fd(batches.cross, x, at, &v, cfg.hvp_step)?,
        };
        axpy(&mut h, -cfg.lower_rate, &correction);
    }
    if !all_finite(&h) {
        return Err(Error::numeric("non-finite hypergradient estimate"));
    }
    Ok(h)
}

/// One local step: `y ← y − α∇_y F(x, y; π)` then `x ← upper(x, h)`.
pub fn bilevel_local_step<T: BilevelTask + ?Sized>(
    batches: &BilevelBatches<'_, T>,
    x: &mut [f64],
    y: &mut [f64],
    cfg: &BilevelStepConfig,
    upper: &mut UpperOptimizer,
) -> Result<StepDiagnostics> {
    cfg.validate()?;
    check_len(x.len(), batches.upper.upper_dim(), "x")?;
    check_len(y.len(), batches.upper.lower_dim(), "y")?;

    let y_prev = y.to_vec();
    let mut lower_grad_norm = 0.0;
    for i in 0..cfg.lower_steps {
        let g = batches.lower.grad_y(x, y)?;
        if i == 0 {
            lower_grad_norm = norm(&g);
        }
        sgd_step(y, &g, cfg.lower_rate)?;
    }

    let h = hypergradient_estimate(batches, x, &y_prev, y, cfg)?;
    upper.apply(x, &h)?;
    Ok(StepDiagnostics {
        hypergrad_norm: norm(&h),
        hypergradient: h,
        lower_grad_norm,
    })
}
