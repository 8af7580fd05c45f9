//! Simulated federated training: client state, the round scheduler and the
//! four algorithms.
//!
//! * `pf2lora`: a shared common adapter trained as the upper level of a
//!   bilevel problem and a private low-rank client adapter as the lower level.
//! * `homlora`: FedAvg over one homogeneous-rank adapter.
//! * `hetlora`: per-client ranks with truncation, self-pruning, zero-padding
//!   and norm-weighted aggregation.
//! * `perfedavg`: FedAvg on the one-step-adapted (MAML) objective.

mod algorithms;
pub mod config;
pub mod hetlora;
mod sampler;
pub mod scheduler;

pub use algorithms::{
    init_clients, run_federation, run_hetlora, run_homlora, run_perfedavg, run_pf2lora, RunOutcome,
};
pub use config::{
    Algorithm, FederationConfig, HetloraConfig, InitScheme, MamlMode, PruneMode, UpperOptimizerKind,
};
pub use hetlora::{hetlora_aggregate, hetlora_prune, hetlora_truncate, hetlora_zero_pad, sparsity_weights, PruneRule};
pub use sampler::BatchSampler;
pub use scheduler::{default_threads, run_round_scheduler, AlgorithmHooks, Evaluation, RoundLog, THREADS_ENV};

use crate::error::{Error, Result};
use crate::models::{ClientAdapter, CommonAdapter, RegressionData};
use crate::numerics::Matrix;
use crate::optim::UpperOptimizer;

/// Inputs describing one client before training.
#[derive(Clone, Debug)]
pub struct ClientSetup {
    pub w0: Matrix,
    pub train: RegressionData,
    pub test: RegressionData,
    /// Target weight for the Frobenius-distance metric, when known.
    pub ground_truth: Option<Matrix>,
}

/// What a client sends to the server: its common adapter and the norm of its
/// update `‖B_k A_k‖_F`.
#[derive(Clone, Debug, PartialEq)]
pub struct Upload {
    pub common: CommonAdapter,
    pub update_norm: f64,
}

/// Independent minibatch streams of one client: `lower` (π), `upper` (ξ),
/// `upper_tilde` (ξ̃) and `cross` (ζ).
#[derive(Clone, Debug)]
pub struct Samplers {
    pub lower: BatchSampler,
    pub upper: BatchSampler,
    pub upper_tilde: BatchSampler,
    pub cross: BatchSampler,
}

/// Everything one client owns during a run.
#[derive(Clone, Debug)]
pub struct ClientState {
    pub client_id: usize,
    pub w0: Matrix,
    /// Local copy of the common adapter (HETLoRA: truncated to `rank_k`).
    pub common: CommonAdapter,
    pub client: Option<ClientAdapter>,
    pub upper: UpperOptimizer,
    pub train: RegressionData,
    pub test: RegressionData,
    pub ground_truth: Option<Matrix>,
    pub samplers: Samplers,
    /// HETLoRA's current rank.
    pub rank_k: Option<usize>,
    /// Norm of the last bilevel hypergradient estimate (PF2LoRA).
    pub last_hypergrad_norm: Option<f64>,
    /// HETLoRA: tail norm of the model received at the start of the round.
    pub received_tail_norm: f64,
}

/// Entrywise mean of `B` and of `A`, taken as `first + Σ (x_k − first) / M`
/// in list order so that identical inputs come back bit-exactly.
pub fn average_common(adapters: &[CommonAdapter]) -> Result<CommonAdapter> {
    let first = adapters
        .first()
        .ok_or_else(|| Error::invalid("no adapters to average"))?;
    let mut db = Matrix::zeros(first.b.rows(), first.b.cols());
    let mut da = Matrix::zeros(first.a.rows(), first.a.cols());
    for ad in adapters {
        if ad.b.shape() != db.shape() || ad.a.shape() != da.shape() {
            return Err(Error::invalid("adapters to average differ in shape"));
        }
        db.add_scaled(&ad.b.sub(&first.b)?, 1.0)?;
        da.add_scaled(&ad.a.sub(&first.a)?, 1.0)?;
    }
    let inv = 1.0 / adapters.len() as f64;
    CommonAdapter::new(first.b.add(&db.scale(inv))?, first.a.add(&da.scale(inv))?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn averaging_examples() {
        let zero = CommonAdapter::new(Matrix::zeros(2, 1), Matrix::zeros(1, 2)).unwrap();
        let two = CommonAdapter::new(Matrix::filled(2, 1, 2.0), Matrix::filled(1, 2, 2.0)).unwrap();
        let mean = average_common(&[zero, two.clone()]).unwrap();
        assert_eq!(mean.a, Matrix::filled(1, 2, 1.0));
        assert_eq!(average_common(&[two.clone(), two.clone(), two.clone()]).unwrap(), two);
        let again = average_common(&[mean.clone(), mean.clone()]).unwrap();
        assert_eq!(again, mean);
        assert!(average_common(&[]).is_err());
        let other = CommonAdapter::new(Matrix::zeros(2, 2), Matrix::zeros(2, 2)).unwrap();
        assert!(average_common(&[two, other]).is_err());
    }
}
