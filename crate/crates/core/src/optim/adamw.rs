//! AdamW with bias correction and decoupled weight decay.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::vector::{all_finite, check_len};

/// Hyperparameters of [`AdamW`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl AdamWConfig {
    pub fn new(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let in_unit = |b: f64| b > 0.0 && b < 1.0;
        if !(self.learning_rate > 0.0)
            || !in_unit(self.beta1)
            || !in_unit(self.beta2)
            || !(self.eps > 0.0)
            || !(self.weight_decay >= 0.0)
        {
            return Err(Error::invalid(format!("invalid AdamW settings {self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamW {
    config: AdamWConfig,
    first_moment: Vec<f64>,
    second_moment: Vec<f64>,
    step: u64,
}

impl AdamW {
    pub fn new(config: AdamWConfig, param_count: usize) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            first_moment: vec![0.0; param_count],
            second_moment: vec![0.0; param_count],
            step: 0,
        })
    }

    pub fn config(&self) -> &AdamWConfig {
        &self.config
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn param_count(&self) -> usize {
        self.first_moment.len()
    }

    /// Clears the moments of the listed parameter slots.
    pub fn reset_slots(&mut self, slots: impl IntoIterator<Item = usize>) {
        for i in slots {
            self.first_moment[i] = 0.0;
            self.second_moment[i] = 0.0;
        }
    }

    pub fn apply(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        check_len(params.len(), self.param_count(), "AdamW params")?;
        check_len(grads.len(), self.param_count(), "AdamW grads")?;
        if !all_finite(grads) {
            return Err(Error::numeric("non-finite gradient passed to AdamW"));
        }
        let AdamWConfig {
            learning_rate: lr,
            beta1,
            beta2,
            eps,
            weight_decay,
        } = self.config;
        self.step += 1;
        let t = self.step as i32;
        let bias1 = 1.0 - beta1.powi(t);
        let bias2 = 1.0 - beta2.powi(t);
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(&mut self.first_moment)
            .zip(&mut self.second_moment)
        {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m / bias1;
            let v_hat = *v / bias2;
            *p -= lr * weight_decay * *p;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        Ok(())
    }
}
