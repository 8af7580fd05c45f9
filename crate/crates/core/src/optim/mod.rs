//! First-order optimizers and the single-loop bilevel stepper.

mod adamw;
pub mod bilevel;
pub mod theory;

pub use adamw::{AdamW, AdamWConfig};
pub use bilevel::{
    bilevel_local_step, hypergradient_estimate, BilevelBatches, BilevelStepConfig, HvpMode,
    IndexPattern, StepDiagnostics,
};
pub use theory::{deterministic_bilevel_run, TheoremConstants, TraceRow};

use crate::error::{Error, Result};
use crate::numerics::vector::{all_finite, check_len};

/// `params -= rate * grads`.
pub fn sgd_step(params: &mut [f64], grads: &[f64], rate: f64) -> Result<()> {
    check_len(grads.len(), params.len(), "sgd grads")?;
    if !all_finite(grads) {
        return Err(Error::numeric("non-finite gradient passed to SGD"));
    }
    for (p, g) in params.iter_mut().zip(grads) {
        *p -= rate * g;
    }
    Ok(())
}

/// Optimizer applied to the upper (shared) variable.
#[derive(Clone, Debug, PartialEq)]
pub enum UpperOptimizer {
    Sgd { rate: f64 },
    AdamW(AdamW),
}

impl UpperOptimizer {
    pub fn apply(&mut self, params: &mut [f64], direction: &[f64]) -> Result<()> {
        match self {
            UpperOptimizer::Sgd { rate } => sgd_step(params, direction, *rate),
            UpperOptimizer::AdamW(opt) => opt.apply(params, direction),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sgd_examples() {
        let mut p = vec![1.0, 2.0];
        sgd_step(&mut p, &[0.0, 0.0], 0.3).unwrap();
        assert_eq!(p, vec![1.0, 2.0]);
        let mut p = vec![1.0];
        sgd_step(&mut p, &[2.0], 0.5).unwrap();
        assert_eq!(p, vec![0.0]);
        assert!(sgd_step(&mut p, &[1.0, 1.0], 0.5).is_err());
    }

    #[test]
    fn sgd_two_steps_equal_one_doubled() {
        let g = [0.25, -1.5, 3.0];
        let mut twice = vec![1.0, 2.0, 3.0];
        sgd_step(&mut twice, &g, 0.125).unwrap();
        sgd_step(&mut twice, &g, 0.125).unwrap();
        let mut once = vec![1.0, 2.0, 3.0];
        sgd_step(&mut once, &g, 0.25).unwrap();
        assert_eq!(twice, once);
    }
}
