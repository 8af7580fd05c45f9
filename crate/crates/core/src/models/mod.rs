//! Differentiable bilevel objectives and their derivative oracles.

pub mod lora;
pub mod quadratic;
pub mod rrr;
pub mod task;

pub use lora::{
    adapter_sum, effective_weight, lora_cross_hvp, lora_grads, lora_loss, weight_loss,
    ClientAdapter, CommonAdapter, DataRole, LoraGrads, RegressionData,
};
pub use quadratic::{quadratic_phi_and_grad, QuadraticBilevel, QuadraticFamily};
pub use rrr::{rrr_best_fit, RrrFit};
pub use task::{cross_hvp_fd, grad_x_fd, grad_y_fd, BilevelTask, LoraTask, FD_GRAD_STEP, FD_HVP_STEP};
