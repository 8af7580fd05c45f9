//! Round scheduler: runs every client's local phase in parallel, then
//! aggregates on a single coordinator and redistributes.
//!
//! Determinism does not depend on the worker count: clients own their random
//! streams and optimizer state, and aggregation walks uploads in client-id
//! order.

use rayon::prelude::*;

use super::config::FederationConfig;
use super::{ClientState, Upload};
use crate::error::{Error, Result};
use crate::metrics::MetricsRecord;
use crate::models::{adapter_sum, effective_weight, weight_loss, CommonAdapter};
use crate::numerics::{effective_rank, Matrix};

/// Environment variable capping the worker pool.
pub const THREADS_ENV: &str = "FEDLORA_THREADS";

/// Metrics rows of one synchronization.
#[derive(Clone, Debug, PartialEq)]
pub struct RoundLog {
    pub round: usize,
    /// Local steps completed by every client.
    pub step: usize,
    pub records: Vec<MetricsRecord>,
}

/// Model a client is evaluated with.
#[derive(Clone, Debug)]
pub struct Evaluation {
    /// Full weight `W0 + adapters`.
    pub weight: Matrix,
    /// Adapter contribution, whose effective rank is reported.
    pub adapters: Matrix,
}

impl Evaluation {
    pub fn from_adapters(state: &ClientState, common: &CommonAdapter) -> Self {
        Self {
            weight: effective_weight(&state.w0, common, state.client.as_ref()),
            adapters: adapter_sum(common, state.client.as_ref()),
        }
    }
}

/// Per-algorithm behaviour plugged into [`run_round_scheduler`].
pub trait AlgorithmHooks: Sync {
    fn local_step(&self, state: &mut ClientState) -> Result<()>;

    /// Post-processing after the local phase (e.g. pruning) and the payload
    /// sent to the server.
    fn finish_local(&self, state: &mut ClientState) -> Result<Upload>;

    /// Sees only uploads: client adapters and data never reach the server.
    fn aggregate(&self, uploads: &[Upload]) -> Result<CommonAdapter>;

    fn download(&self, state: &mut ClientState, global: &CommonAdapter) -> Result<()>;

    fn evaluate(&self, state: &ClientState) -> Result<Evaluation> {
        Ok(Evaluation::from_adapters(state, &state.common))
    }
}

/// `FEDLORA_THREADS` if set and positive, otherwise one worker per client.
pub fn default_threads(clients: usize) -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|n| *n > 0)
        .unwrap_or(clients)
        .max(1)
}

/// First failure in client order, tagged with the step it happened at.
fn first_error(results: Vec<Result<(), (usize, Error)>>) -> Result<()> {
    for (client_id, r) in results.into_iter().enumerate() {
        if let Err((step, e)) = r {
            return Err(Error::Client {
                client_id,
                step,
                source: Box::new(e),
            });
        }
    }
    Ok(())
}

fn record(cfg: &FederationConfig, state: &ClientState, eval: &Evaluation, round: usize, step: usize) -> Result<MetricsRecord> {
    let fro_dist_sq = match &state.ground_truth {
        Some(w) => Some(eval.weight.sub(w)?.squared_frobenius()),
        None => None,
    };
    Ok(MetricsRecord {
        round,
        step,
        client_id: state.client_id,
        train_loss: weight_loss(&eval.weight, &state.train)?,
        test_loss: weight_loss(&eval.weight, &state.test)?,
        fro_dist_sq,
        eff_rank: Some(effective_rank(&eval.adapters, cfg.eff_rank_threshold)?),
        hypergrad_norm: state.last_hypergrad_norm,
        current_rank_k: state.rank_k,
    })
}

/// Drives `cfg.total_steps` local steps per client with synchronization every
/// `cfg.interval` steps (the last round may be shorter) and hands one
/// [`RoundLog`] per synchronization to `sink`.
pub fn run_round_scheduler(
    cfg: &FederationConfig,
    states: &mut [ClientState],
    hooks: &dyn AlgorithmHooks,
    threads: usize,
    sink: &mut dyn FnMut(&RoundLog) -> Result<()>,
) -> Result<()> {
    cfg.validate()?;
    if states.len() != cfg.clients {
        return Err(Error::Config(format!(
            "{} client states for clients = {}",
            states.len(),
            cfg.clients
        )));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;

    let mut step = 0;
    for round in 0..cfg.rounds() {
        let local_steps = cfg.steps_in_round(round);
        let results: Vec<Result<(), (usize, Error)>> = pool.install(|| {
            states
                .par_iter_mut()
                .map(|s| (0..local_steps).try_for_each(|i| hooks.local_step(s).map_err(|e| (step + i + 1, e))))
                .collect()
        });
        first_error(results)?;
        step += local_steps;

        let uploads: Vec<Result<Upload>> =
            pool.install(|| states.par_iter_mut().map(|s| hooks.finish_local(s)).collect());
        let uploads = uploads
            .into_iter()
            .enumerate()
            .map(|(client_id, u)| {
                u.map_err(|e| Error::Client {
                    client_id,
                    step,
                    source: Box::new(e),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let global = hooks.aggregate(&uploads)?;
        let results: Vec<Result<(), (usize, Error)>> = pool.install(|| {
            states
                .par_iter_mut()
                .map(|s| hooks.download(s, &global).map_err(|e| (step, e)))
                .collect()
        });
        first_error(results)?;

        let records: Vec<Result<MetricsRecord>> = pool.install(|| {
            states
                .par_iter()
                .map(|s| record(cfg, s, &hooks.evaluate(s)?, round, step))
                .collect()
        });
        let records = records.into_iter().collect::<Result<Vec<_>>>()?;
        sink(&RoundLog { round, step, records })?;
    }
    Ok(())
}
