//! Client initialization and the hooks of the four algorithms.

use std::borrow::Cow;

use super::config::{Algorithm, FederationConfig, InitScheme, MamlMode};
use super::hetlora::{
    add_tail_penalty, hetlora_aggregate, hetlora_prune, hetlora_truncate, hetlora_zero_pad,
    penalized_tail, tail_norm, PruneRule,
};
use super::sampler::BatchSampler;
use super::scheduler::{default_threads, run_round_scheduler, AlgorithmHooks, Evaluation, RoundLog};
use super::{average_common, ClientSetup, ClientState, Samplers, Upload};
use crate::error::{Error, Result};
use crate::models::{lora_grads, ClientAdapter, CommonAdapter, LoraTask, RegressionData};
use crate::numerics::vector::{add_scaled, axpy};
use crate::numerics::{gaussian_matrix, orthogonal_complement_sample, streams, Matrix, RngStream};
use crate::optim::{bilevel_local_step, BilevelBatches, BilevelStepConfig, UpperOptimizer};

/// Final client states of a finished run.
#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub states: Vec<ClientState>,
    pub rounds: usize,
}

fn draw<'a>(sampler: &mut BatchSampler, data: &'a RegressionData) -> Cow<'a, RegressionData> {
    if sampler.is_full_batch() {
        Cow::Borrowed(data)
    } else {
        Cow::Owned(data.select(&sampler.next_batch()))
    }
}

fn common_grad(w0: &Matrix, common: &CommonAdapter, data: &RegressionData) -> Result<Vec<f64>> {
    let g = lora_grads(w0, common, None, data)?;
    let mut v = g.b.into_vec();
    v.extend_from_slice(g.a.as_slice());
    Ok(v)
}

fn check_setups(cfg: &FederationConfig, setups: &[ClientSetup]) -> Result<(usize, usize)> {
    if setups.len() != cfg.clients {
        return Err(Error::Config(format!(
            "{} client datasets for clients = {}",
            setups.len(),
            cfg.clients
        )));
    }
    let (m, n) = setups[0].w0.shape();
    for (k, s) in setups.iter().enumerate() {
        let shapes_ok = s.w0.shape() == (m, n)
            && [&s.train, &s.test]
                .iter()
                .all(|d| d.input_dim() == m && d.output_dim() == n && d.samples() > 0)
            && s.ground_truth.as_ref().is_none_or(|w| w.shape() == (m, n));
        if !shapes_ok {
            return Err(Error::invalid(format!("client {k}: inconsistent shapes")));
        }
    }
    Ok((m, n))
}

/// Builds the initial client states. The common adapter is drawn once from
/// the server stream; client adapters and batch streams come from each
/// client's own streams.
pub fn init_clients(cfg: &FederationConfig, setups: &[ClientSetup]) -> Result<Vec<ClientState>> {
    cfg.validate()?;
    let (m, n) = check_setups(cfg, setups)?;
    let std = cfg.init_std;
    let mut server = RngStream::new(cfg.seed, streams::SERVER);
    let common_rank = match cfg.algorithm {
        Algorithm::Hetlora => cfg.hetlora.r_max,
        _ => cfg.rank,
    };
    let a = gaussian_matrix(common_rank, n, 0.0, std, &mut server)?;
    let b = match cfg.init {
        InitScheme::Standard => Matrix::zeros(m, common_rank),
        InitScheme::Orthogonal => gaussian_matrix(m, common_rank, 0.0, std, &mut server)?,
    };
    let global = CommonAdapter::new(b, a)?;

    setups
        .iter()
        .enumerate()
        .map(|(k, setup)| {
            let mut init_rng = RngStream::new(cfg.seed, streams::client(k, streams::CLIENT_INIT));
            let client = match cfg.algorithm {
                Algorithm::Pf2lora => Some(match cfg.init {
                    InitScheme::Standard => ClientAdapter::new(
                        Matrix::zeros(m, cfg.client_rank),
                        gaussian_matrix(cfg.client_rank, n, 0.0, std, &mut init_rng)?,
                    )?,
                    InitScheme::Orthogonal => {
                        let (d, c) =
                            orthogonal_complement_sample(&global.a, &global.b, cfg.client_rank, &mut init_rng)?;
                        ClientAdapter::new(d.scale(std), c.scale(std))?
                    }
                }),
                _ => None,
            };
            let (common, rank_k) = match cfg.algorithm {
                Algorithm::Hetlora => {
                    let r = cfg.hetlora.initial_rank(k, cfg.clients);
                    (hetlora_truncate(&global, r)?, Some(r))
                }
                _ => (global.clone(), None),
            };
            let sampler = |purpose| {
                BatchSampler::new(
                    setup.train.samples(),
                    cfg.batch_size,
                    RngStream::new(cfg.seed, streams::client(k, purpose)),
                )
            };
            let mut state = ClientState {
                client_id: k,
                w0: setup.w0.clone(),
                upper: cfg.upper_optimizer(global.param_count())?,
                common,
                client,
                train: setup.train.clone(),
                test: setup.test.clone(),
                ground_truth: setup.ground_truth.clone(),
                samplers: Samplers {
                    lower: sampler(streams::BATCH_LOWER),
                    upper: sampler(streams::BATCH_UPPER),
                    upper_tilde: sampler(streams::BATCH_UPPER_TILDE),
                    cross: sampler(streams::BATCH_CROSS),
                },
                rank_k,
                last_hypergrad_norm: None,
                received_tail_norm: 0.0,
            };
            if let Some(r) = rank_k {
                let tail = penalized_tail(r, cfg.hetlora.gamma(), cfg.hetlora.prune_mode);
                state.received_tail_norm = tail_norm(&state.common, tail);
            }
            Ok(state)
        })
        .collect()
}

fn plain_upload(state: &ClientState) -> Upload {
    Upload {
        update_norm: state.common.product().frobenius_norm(),
        common: state.common.clone(),
    }
}

struct Pf2lora {
    step: BilevelStepConfig,
    rank: usize,
    client_rank: usize,
}

impl AlgorithmHooks for Pf2lora {
    fn local_step(&self, s: &mut ClientState) -> Result<()> {
        let client = s
            .client
            .as_ref()
            .ok_or_else(|| Error::invalid("pf2lora client without a client adapter"))?;
        let lower = draw(&mut s.samplers.lower, &s.train);
        let upper = draw(&mut s.samplers.upper, &s.train);
        let upper_tilde = draw(&mut s.samplers.upper_tilde, &s.train);
        let cross = draw(&mut s.samplers.cross, &s.train);
        let task = |d| LoraTask::new(&s.w0, d, self.rank, self.client_rank);
        let (t_lower, t_upper, t_tilde, t_cross) = (task(&lower), task(&upper), task(&upper_tilde), task(&cross));
        let batches = BilevelBatches {
            lower: &t_lower,
            upper: &t_upper,
            upper_tilde: &t_tilde,
            cross: &t_cross,
        };
        let mut x = s.common.to_flat();
        let mut y = client.to_flat();
        let diag = bilevel_local_step(&batches, &mut x, &mut y, &self.step, &mut s.upper)?;
        let client = client.with_flat(&y)?;
        s.common = s.common.with_flat(&x)?;
        s.client = Some(client);
        s.last_hypergrad_norm = Some(diag.hypergrad_norm);
        Ok(())
    }

    fn finish_local(&self, s: &mut ClientState) -> Result<Upload> {
        Ok(plain_upload(s))
    }

    fn aggregate(&self, uploads: &[Upload]) -> Result<CommonAdapter> {
        let adapters: Vec<CommonAdapter> = uploads.iter().map(|u| u.common.clone()).collect();
        average_common(&adapters)
    }

    fn download(&self, s: &mut ClientState, global: &CommonAdapter) -> Result<()> {
        s.common = global.clone();
        Ok(())
    }
}

struct Homlora;

impl AlgorithmHooks for Homlora {
    fn local_step(&self, s: &mut ClientState) -> Result<()> {
        let batch = draw(&mut s.samplers.upper, &s.train);
        let g = common_grad(&s.w0, &s.common, &batch)?;
        let mut x = s.common.to_flat();
        s.upper.apply(&mut x, &g)?;
        s.common = s.common.with_flat(&x)?;
        Ok(())
    }

    fn finish_local(&self, s: &mut ClientState) -> Result<Upload> {
        Ok(plain_upload(s))
    }

    fn aggregate(&self, uploads: &[Upload]) -> Result<CommonAdapter> {
        let adapters: Vec<CommonAdapter> = uploads.iter().map(|u| u.common.clone()).collect();
        average_common(&adapters)
    }

    fn download(&self, s: &mut ClientState, global: &CommonAdapter) -> Result<()> {
        s.common = global.clone();
        Ok(())
    }
}

struct PerFedAvg {
    alpha: f64,
    mode: MamlMode,
    hvp_step: f64,
}

impl PerFedAvg {
    /// `x − α ∇f(x; data)`.
    fn adapt(&self, w0: &Matrix, common: &CommonAdapter, data: &RegressionData) -> Result<CommonAdapter> {
        let g = common_grad(w0, common, data)?;
        common.with_flat(&add_scaled(&common.to_flat(), -self.alpha, &g))
    }
}

impl AlgorithmHooks for PerFedAvg {
    fn local_step(&self, s: &mut ClientState) -> Result<()> {
        let inner = draw(&mut s.samplers.lower, &s.train);
        let outer = draw(&mut s.samplers.upper, &s.train);
        let hess = draw(&mut s.samplers.cross, &s.train);
        let adapted = if self.alpha == 0.0 {
            s.common.clone()
        } else {
            self.adapt(&s.w0, &s.common, &inner)?
        };
        let mut g = common_grad(&s.w0, &adapted, &outer)?;
        if self.mode == MamlMode::Exact && self.alpha != 0.0 {
            // (I − α∇²f(x)) g with the Hessian-vector product by central differences.
            let x = s.common.to_flat();
            let plus = s.common.with_flat(&add_scaled(&x, self.hvp_step, &g))?;
            let minus = s.common.with_flat(&add_scaled(&x, -self.hvp_step, &g))?;
            let gp = common_grad(&s.w0, &plus, &hess)?;
            let gm = common_grad(&s.w0, &minus, &hess)?;
            let hvp: Vec<f64> = gp
                .iter()
                .zip(&gm)
                .map(|(p, m)| (p - m) / (2.0 * self.hvp_step))
                .collect();
            axpy(&mut g, -self.alpha, &hvp);
        }
        let mut x = s.common.to_flat();
        s.upper.apply(&mut x, &g)?;
        s.common = s.common.with_flat(&x)?;
        Ok(())
    }

    fn finish_local(&self, s: &mut ClientState) -> Result<Upload> {
        Ok(plain_upload(s))
    }

    fn aggregate(&self, uploads: &[Upload]) -> Result<CommonAdapter> {
        let adapters: Vec<CommonAdapter> = uploads.iter().map(|u| u.common.clone()).collect();
        average_common(&adapters)
    }

    fn download(&self, s: &mut ClientState, global: &CommonAdapter) -> Result<()> {
        s.common = global.clone();
        Ok(())
    }

    /// Personalizes with one gradient step on the full training split.
    fn evaluate(&self, s: &ClientState) -> Result<Evaluation> {
        let adapted = self.adapt(&s.w0, &s.common, &s.train)?;
        Ok(Evaluation::from_adapters(s, &adapted))
    }
}

struct Hetlora {
    r_max: usize,
    lambda: f64,
    rule: PruneRule,
}

impl Hetlora {
    fn rank(s: &ClientState) -> Result<usize> {
        s.rank_k.ok_or_else(|| Error::invalid("hetlora client without a rank"))
    }
}

impl AlgorithmHooks for Hetlora {
    fn local_step(&self, s: &mut ClientState) -> Result<()> {
        let r = Self::rank(s)?;
        let batch = draw(&mut s.samplers.upper, &s.train);
        let grads = lora_grads(&s.w0, &s.common, None, &batch)?;
        let (mut gb, mut ga) = (grads.b, grads.a);
        let tail = penalized_tail(r, self.rule.gamma, self.rule.mode);
        add_tail_penalty(&s.common, tail, self.lambda, &mut gb, &mut ga);

        // The optimizer state lives in the padded rank-r_max layout so that
        // slot j always refers to global column j.
        let padded_grad = hetlora_zero_pad(&CommonAdapter::new(gb, ga)?, self.r_max)?;
        let mut x = hetlora_zero_pad(&s.common, self.r_max)?.to_flat();
        s.upper.apply(&mut x, &padded_grad.to_flat())?;
        let (m, n) = s.common.output_shape();
        s.common = hetlora_truncate(&CommonAdapter::zeros(m, n, self.r_max).with_flat(&x)?, r)?;
        Ok(())
    }

    fn finish_local(&self, s: &mut ClientState) -> Result<Upload> {
        let r = Self::rank(s)?;
        let new_rank = hetlora_prune(&s.common, &self.rule, s.received_tail_norm);
        if new_rank < r {
            if let UpperOptimizer::AdamW(opt) = &mut s.upper {
                let (m, n) = s.common.output_shape();
                let r_max = self.r_max;
                let b_slots = (0..m).flat_map(move |i| (new_rank..r).map(move |j| i * r_max + j));
                let a_slots = (new_rank..r).flat_map(move |j| (0..n).map(move |c| m * r_max + j * n + c));
                opt.reset_slots(b_slots.chain(a_slots));
            }
            s.common = hetlora_truncate(&s.common, new_rank)?;
            s.rank_k = Some(new_rank);
        }
        Ok(Upload {
            update_norm: s.common.product().frobenius_norm(),
            common: hetlora_zero_pad(&s.common, self.r_max)?,
        })
    }

    fn aggregate(&self, uploads: &[Upload]) -> Result<CommonAdapter> {
        hetlora_aggregate(uploads)
    }

    fn download(&self, s: &mut ClientState, global: &CommonAdapter) -> Result<()> {
        let r = Self::rank(s)?;
        s.common = hetlora_truncate(global, r)?;
        s.received_tail_norm = tail_norm(&s.common, penalized_tail(r, self.rule.gamma, self.rule.mode));
        Ok(())
    }
}

fn hooks_for(cfg: &FederationConfig) -> Box<dyn AlgorithmHooks> {
    match cfg.algorithm {
        Algorithm::Pf2lora => Box::new(Pf2lora {
            step: BilevelStepConfig {
                lower_rate: cfg.lower_rate,
                hvp_mode: cfg.hvp_mode,
                hvp_step: cfg.hvp_step,
                index_pattern: cfg.index_pattern,
                lower_steps: cfg.lower_steps,
            },
            rank: cfg.rank,
            client_rank: cfg.client_rank,
        }),
        Algorithm::Homlora => Box::new(Homlora),
        Algorithm::Perfedavg => Box::new(PerFedAvg {
            alpha: cfg.lower_rate,
            mode: cfg.maml_mode,
            hvp_step: cfg.hvp_step,
        }),
        Algorithm::Hetlora => Box::new(Hetlora {
            r_max: cfg.hetlora.r_max,
            lambda: cfg.hetlora.lambda,
            rule: PruneRule {
                mode: cfg.hetlora.prune_mode,
                gamma: cfg.hetlora.gamma(),
                r_min: cfg.hetlora.r_min,
                prune_tol_factor: cfg.hetlora.prune_tol_factor,
            },
        }),
    }
}

/// Runs the algorithm selected by `cfg.algorithm` on `threads` workers
/// (default: [`default_threads`]).
pub fn run_federation(
    cfg: &FederationConfig,
    setups: &[ClientSetup],
    threads: Option<usize>,
    sink: &mut dyn FnMut(&RoundLog) -> Result<()>,
) -> Result<RunOutcome> {
    let mut states = init_clients(cfg, setups)?;
    let hooks = hooks_for(cfg);
    let threads = threads.unwrap_or_else(|| default_threads(cfg.clients));
    run_round_scheduler(cfg, &mut states, hooks.as_ref(), threads, sink)?;
    Ok(RunOutcome {
        states,
        rounds: cfg.rounds(),
    })
}

fn run_as(
    algorithm: Algorithm,
    cfg: &FederationConfig,
    setups: &[ClientSetup],
    sink: &mut dyn FnMut(&RoundLog) -> Result<()>,
) -> Result<RunOutcome> {
    if cfg.algorithm != algorithm {
        return Err(Error::Config(format!(
            "configuration selects {} but {algorithm} was requested",
            cfg.algorithm
        )));
    }
    run_federation(cfg, setups, None, sink)
}

pub fn run_pf2lora(
    cfg: &FederationConfig,
    setups: &[ClientSetup],
    sink: &mut dyn FnMut(&RoundLog) -> Result<()>,
) -> Result<RunOutcome> {
    run_as(Algorithm::Pf2lora, cfg, setups, sink)
}

pub fn run_homlora(
    cfg: &FederationConfig,
    setups: &[ClientSetup],
    sink: &mut dyn FnMut(&RoundLog) -> Result<()>,
) -> Result<RunOutcome> {
    run_as(Algorithm::Homlora, cfg, setups, sink)
}

pub fn run_hetlora(
    cfg: &FederationConfig,
    setups: &[ClientSetup],
    sink: &mut dyn FnMut(&RoundLog) -> Result<()>,
) -> Result<RunOutcome> {
    run_as(Algorithm::Hetlora, cfg, setups, sink)
}

pub fn run_perfedavg(
    cfg: &FederationConfig,
    setups: &[ClientSetup],
    sink: &mut dyn FnMut(&RoundLog) -> Result<()>,
) -> Result<RunOutcome> {
    run_as(Algorithm::Perfedavg, cfg, setups, sink)
}
