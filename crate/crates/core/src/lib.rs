//! Deterministic federated fine-tuning simulator.
//!
//! The crate simulates personalized federated low-rank adaptation on dense
//! linear models. It provides:
//!
//! * [`numerics`]: row-major dense matrices, seeded random streams and spectral utilities.
//! * [`models`]: the two-level LoRA regression loss, a closed-form quadratic bilevel
//!   problem, and derivative oracles (analytic and finite-difference).
//! * [`optim`]: SGD, AdamW, the single-loop bilevel stepper and the deterministic
//!   bilevel run used by the convergence harness.
//! * [`federation`]: the round scheduler and four algorithms (`pf2lora`, `homlora`,
//!   `hetlora`, `perfedavg`).
//! * [`synthdata`]: ground-truth low-rank regression tasks.
//! * [`experiments`]: run configuration, metrics CSV, manifests and the canned studies
//!   driven by the `fedlora` binary.

// `!(x > 0.0)` is used deliberately so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod experiments;
pub mod federation;
pub mod metrics;
pub mod models;
pub mod numerics;
pub mod optim;
pub mod synthdata;

pub use error::{Error, Result};
pub use numerics::{Matrix, RngStream};
