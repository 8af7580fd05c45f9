//! Run hyperparameters shared by the four algorithms.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optim::{AdamW, AdamWConfig, HvpMode, IndexPattern, UpperOptimizer};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Pf2lora,
    Homlora,
    Hetlora,
    Perfedavg,
}

impl Algorithm {
    pub const ALL: [Algorithm; 4] = [
        Algorithm::Pf2lora,
        Algorithm::Homlora,
        Algorithm::Hetlora,
        Algorithm::Perfedavg,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Pf2lora => "pf2lora",
            Algorithm::Homlora => "homlora",
            Algorithm::Hetlora => "hetlora",
            Algorithm::Perfedavg => "perfedavg",
        }
    }
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown algorithm {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpperOptimizerKind {
    #[default]
    Adamw,
    Sgd,
}

/// Adapter initialization.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitScheme {
    /// `A`, `C` Gaussian and `B`, `D` zero, so the adapters start at zero.
    #[default]
    Standard,
    /// All factors Gaussian, with each client pair drawn orthogonal to the
    /// common pair so that the ranks add.
    Orthogonal,
}

/// How HETLoRA's `γ` drives self-pruning.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PruneMode {
    /// `γ` is the penalized tail fraction; tail columns whose importance
    /// `‖B[:,j]‖·‖A[j,:]‖` falls below `prune_tol_factor × mean` are removed.
    #[default]
    TrailingPenalty,
    /// `γ` is a rank-decay multiplier: the last `r_k − ⌊γ r_k⌋` columns are
    /// penalized, and `r_k ← ⌊γ r_k⌋` whenever local training shrank that
    /// block relative to the received model.
    RankDecay,
}

impl PruneMode {
    pub fn default_gamma(self) -> f64 {
        match self {
            PruneMode::TrailingPenalty => 0.3,
            PruneMode::RankDecay => 0.99,
        }
    }
}

/// Gradient used by Per-FedAvg.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MamlMode {
    #[default]
    FirstOrder,
    Exact,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HetloraConfig {
    pub r_min: usize,
    pub r_max: usize,
    /// `None` selects the mode's default.
    pub gamma: Option<f64>,
    pub lambda: f64,
    pub prune_mode: PruneMode,
    pub prune_tol_factor: f64,
    /// Explicit per-client initial ranks; otherwise
    /// `round(r_min + (r_max − r_min)(k − 1)/M)` for `k = 1..=M`.
    pub initial_ranks: Option<Vec<usize>>,
}

impl Default for HetloraConfig {
    fn default() -> Self {
        Self {
            r_min: 1,
            r_max: 12,
            gamma: None,
            lambda: 0.1,
            prune_mode: PruneMode::TrailingPenalty,
            prune_tol_factor: 1e-4,
            initial_ranks: None,
        }
    }
}

impl HetloraConfig {
    pub fn gamma(&self) -> f64 {
        self.gamma.unwrap_or_else(|| self.prune_mode.default_gamma())
    }

    pub fn initial_rank(&self, client_id: usize, clients: usize) -> usize {
        if let Some(ranks) = &self.initial_ranks {
            return ranks[client_id];
        }
        let k = client_id as f64; // (k − 1) for the 1-based client index
        let r = self.r_min as f64 + (self.r_max - self.r_min) as f64 * k / clients as f64;
        (r.round() as usize).clamp(self.r_min, self.r_max)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FederationConfig {
    pub algorithm: Algorithm,
    pub clients: usize,
    pub total_steps: usize,
    pub interval: usize,
    /// `None` uses the full training split for every gradient.
    pub batch_size: Option<usize>,
    /// Lower rate α (PF2LoRA's lower SGD, Per-FedAvg's inner step).
    pub lower_rate: f64,
    /// Upper rate η.
    pub upper_rate: f64,
    pub upper_optimizer: UpperOptimizerKind,
    pub weight_decay: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Common-adapter rank `r`.
    pub rank: usize,
    /// Client-adapter rank `r̃ < r` (PF2LoRA).
    pub client_rank: usize,
    pub init: InitScheme,
    pub init_std: f64,
    pub hvp_mode: HvpMode,
    pub hvp_step: f64,
    pub index_pattern: IndexPattern,
    pub lower_steps: usize,
    pub maml_mode: MamlMode,
    pub hetlora: HetloraConfig,
    pub eff_rank_threshold: f64,
    pub seed: u64,
}

impl Default for FederationConfig {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::Pf2lora,
            clients: 2,
            total_steps: 2000,
            interval: 10,
            batch_size: None,
            lower_rate: 0.002,
            upper_rate: 0.005,
            upper_optimizer: UpperOptimizerKind::Adamw,
            weight_decay: 0.0,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            rank: 4,
            client_rank: 2,
            init: InitScheme::Standard,
            init_std: 1.0,
            hvp_mode: HvpMode::Analytic,
            hvp_step: crate::models::FD_HVP_STEP,
            index_pattern: IndexPattern::Current,
            lower_steps: 1,
            maml_mode: MamlMode::FirstOrder,
            hetlora: HetloraConfig::default(),
            eff_rank_threshold: 0.9,
            seed: 0,
        }
    }
}

impl FederationConfig {
    /// Communication rounds: `⌈T / I⌉`, the last one possibly shorter.
    pub fn rounds(&self) -> usize {
        self.total_steps.div_ceil(self.interval)
    }

    /// Local steps in round `round`.
    pub fn steps_in_round(&self, round: usize) -> usize {
        self.interval.min(self.total_steps - round * self.interval)
    }

    pub fn adamw(&self) -> AdamWConfig {
        AdamWConfig {
            learning_rate: self.upper_rate,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: self.adam_eps,
            weight_decay: self.weight_decay,
        }
    }

    pub fn upper_optimizer(&self, param_count: usize) -> Result<UpperOptimizer> {
        Ok(match self.upper_optimizer {
            UpperOptimizerKind::Adamw => UpperOptimizer::AdamW(AdamW::new(self.adamw(), param_count)?),
            UpperOptimizerKind::Sgd => UpperOptimizer::Sgd {
                rate: self.upper_rate,
            },
        })
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.clients == 0 {
            return fail("clients must be >= 1".into());
        }
        if self.total_steps == 0 {
            return fail("total_steps must be >= 1".into());
        }
        if self.interval == 0 {
            return fail("interval must be >= 1".into());
        }
        if self.batch_size == Some(0) {
            return fail("batch_size must be >= 1".into());
        }
        for (name, v) in [("lower_rate", self.lower_rate), ("upper_rate", self.upper_rate)] {
            if !(v >= 0.0) || !v.is_finite() {
                return fail(format!("{name} must be finite and non-negative, got {v}"));
            }
        }
        if !(self.upper_rate > 0.0) {
            return fail("upper_rate must be positive".into());
        }
        if self.algorithm == Algorithm::Pf2lora && !(self.lower_rate > 0.0) {
            return fail("lower_rate must be positive for pf2lora".into());
        }
        if self.upper_optimizer == UpperOptimizerKind::Adamw {
            self.adamw().validate().map_err(|e| Error::Config(e.to_string()))?;
        }
        if self.rank == 0 {
            return fail("rank must be >= 1".into());
        }
        if self.algorithm == Algorithm::Pf2lora && (self.client_rank == 0 || self.client_rank >= self.rank) {
            return fail(format!(
                "client_rank must satisfy 0 < client_rank < rank, got {} and {}",
                self.client_rank, self.rank
            ));
        }
        if !(self.init_std >= 0.0) || !self.init_std.is_finite() {
            return fail("init_std must be finite and non-negative".into());
        }
        if !(self.hvp_step > 0.0) {
            return fail("hvp_step must be positive".into());
        }
        if self.lower_steps == 0 {
            return fail("lower_steps must be >= 1".into());
        }
        if !(self.eff_rank_threshold > 0.0 && self.eff_rank_threshold <= 1.0) {
            return fail("eff_rank_threshold must lie in (0, 1]".into());
        }
        if self.algorithm == Algorithm::Hetlora {
            let h = &self.hetlora;
            if h.r_min == 0 || h.r_min > h.r_max {
                return fail(format!("need 1 <= r_min <= r_max, got {} and {}", h.r_min, h.r_max));
            }
            let gamma = h.gamma();
            if !(gamma > 0.0 && gamma <= 1.0) {
                return fail(format!("gamma must lie in (0, 1], got {gamma}"));
            }
            if !(h.lambda >= 0.0) || !(h.prune_tol_factor >= 0.0) {
                return fail("lambda and prune_tol_factor must be non-negative".into());
            }
            if let Some(ranks) = &h.initial_ranks {
                if ranks.len() != self.clients {
                    return fail(format!("{} initial ranks for {} clients", ranks.len(), self.clients));
                }
                if ranks.iter().any(|r| *r < h.r_min || *r > h.r_max) {
                    return fail(format!("initial ranks {ranks:?} outside [r_min, r_max]"));
                }
            }
        }
        Ok(())
    }
}
