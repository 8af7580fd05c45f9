//! Flat key-value run configuration (TOML).
//!
//! Every key maps onto one field of [`FederationConfig`], [`HetloraConfig`]
//! or [`SyntheticSpec`]; clients read their data either from the synthetic
//! generator or from CSV files (`train_files` / `test_files`).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::federation::{
    Algorithm, FederationConfig, InitScheme, MamlMode, PruneMode, UpperOptimizerKind,
};
use crate::optim::{HvpMode, IndexPattern};
use crate::synthdata::{NoiseScale, SyntheticSpec};

/// Keys a full `fed` configuration must contain.
pub const REQUIRED_KEYS: [&str; 2] = ["algorithm", "interval"];

/// Where client datasets come from.
#[derive(Clone, Debug, PartialEq)]
pub enum DataSource {
    Synthetic(SyntheticSpec),
    /// One train and one test CSV per client.
    Files { train: Vec<PathBuf>, test: Vec<PathBuf> },
}

impl DataSource {
    pub fn clients(&self) -> usize {
        match self {
            DataSource::Synthetic(spec) => spec.clients(),
            DataSource::Files { train, .. } => train.len(),
        }
    }
}

/// A fully resolved run: hyperparameters plus data source.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub federation: FederationConfig,
    pub data: DataSource,
}

/// On-disk shape of a configuration; absent keys keep their defaults.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FlatConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub algorithm: Option<Algorithm>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub clients: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub total_steps: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub interval: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lower_rate: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub upper_rate: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub upper_optimizer: Option<UpperOptimizerKind>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weight_decay: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub adam_beta1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub adam_beta2: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub adam_eps: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rank: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub client_rank: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub init: Option<InitScheme>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub init_std: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hvp_mode: Option<HvpMode>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hvp_step: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub index_pattern: Option<IndexPattern>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lower_steps: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub maml_mode: Option<MamlMode>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eff_rank_threshold: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r_min: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r_max: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prune_mode: Option<PruneMode>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prune_tol_factor: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub initial_ranks: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub m: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub true_ranks: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub samples: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub noise_levels: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub noise_scale: Option<NoiseScale>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train_fraction: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train_files: Option<Vec<PathBuf>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test_files: Option<Vec<PathBuf>>,
}

/// Every key [`FlatConfig`] accepts.
pub const KNOWN_KEYS: [&str; 39] = [
    "algorithm",
    "seed",
    "clients",
    "total_steps",
    "interval",
    "batch_size",
    "lower_rate",
    "upper_rate",
    "upper_optimizer",
    "weight_decay",
    "adam_beta1",
    "adam_beta2",
    "adam_eps",
    "rank",
    "client_rank",
    "init",
    "init_std",
    "hvp_mode",
    "hvp_step",
    "index_pattern",
    "lower_steps",
    "maml_mode",
    "eff_rank_threshold",
    "r_min",
    "r_max",
    "gamma",
    "lambda",
    "prune_mode",
    "prune_tol_factor",
    "initial_ranks",
    "m",
    "n",
    "true_ranks",
    "samples",
    "noise_levels",
    "noise_scale",
    "train_fraction",
    "train_files",
    "test_files",
];

impl FlatConfig {
    /// Parses a document, rejecting unknown keys (all of them are listed) and
    /// any of `required` that is missing.
    pub fn parse(text: &str, required: &[&str]) -> Result<Self> {
        let table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::Config(format!("not a valid key-value document: {}", e.message())))?;
        let unknown: Vec<&str> = table.keys().map(String::as_str).filter(|k| !KNOWN_KEYS.contains(k)).collect();
        if !unknown.is_empty() {
            return Err(Error::Config(format!("unknown keys: {}", unknown.join(", "))));
        }
        let missing: Vec<&str> = required.iter().copied().filter(|k| !table.contains_key(*k)).collect();
        if !missing.is_empty() {
            return Err(Error::Config(format!("missing required keys: {}", missing.join(", "))));
        }
        table
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))
    }

    pub fn load(path: impl AsRef<Path>, required: &[&str]) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, required)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("cannot serialize config: {e}")))
    }
}

impl RunConfig {
    /// Defaults with synthetic data for `algorithm`.
    pub fn new(algorithm: Algorithm) -> Self {
        Self {
            federation: FederationConfig {
                algorithm,
                ..FederationConfig::default()
            },
            data: DataSource::Synthetic(SyntheticSpec::default()),
        }
    }

    /// Parses a complete `fed` configuration.
    pub fn parse(text: &str) -> Result<Self> {
        let flat = FlatConfig::parse(text, &REQUIRED_KEYS)?;
        let algorithm = flat.algorithm.expect("required key checked");
        let mut cfg = Self::new(algorithm);
        cfg.apply(&flat)?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Overwrites every field present in `flat`, then re-derives the client
    /// count and validates.
    pub fn apply(&mut self, flat: &FlatConfig) -> Result<()> {
        let f = &mut self.federation;
        macro_rules! set {
            ($($src:ident => $dst:expr),* $(,)?) => {
                $(if let Some(v) = flat.$src.clone() { $dst = v; })*
            };
        }
        set!(
            algorithm => f.algorithm,
            seed => f.seed,
            total_steps => f.total_steps,
            interval => f.interval,
            lower_rate => f.lower_rate,
            upper_rate => f.upper_rate,
            upper_optimizer => f.upper_optimizer,
            weight_decay => f.weight_decay,
            adam_beta1 => f.adam_beta1,
            adam_beta2 => f.adam_beta2,
            adam_eps => f.adam_eps,
            rank => f.rank,
            client_rank => f.client_rank,
            init => f.init,
            init_std => f.init_std,
            hvp_mode => f.hvp_mode,
            hvp_step => f.hvp_step,
            index_pattern => f.index_pattern,
            lower_steps => f.lower_steps,
            maml_mode => f.maml_mode,
            eff_rank_threshold => f.eff_rank_threshold,
            r_min => f.hetlora.r_min,
            r_max => f.hetlora.r_max,
            lambda => f.hetlora.lambda,
            prune_mode => f.hetlora.prune_mode,
            prune_tol_factor => f.hetlora.prune_tol_factor,
        );
        if flat.batch_size.is_some() {
            f.batch_size = flat.batch_size;
        }
        if flat.gamma.is_some() {
            f.hetlora.gamma = flat.gamma;
        }
        if flat.initial_ranks.is_some() {
            f.hetlora.initial_ranks = flat.initial_ranks.clone();
        }

        match (&flat.train_files, &flat.test_files) {
            (Some(train), Some(test)) => {
                if train.len() != test.len() {
                    return Err(Error::Config(format!(
                        "{} train_files but {} test_files",
                        train.len(),
                        test.len()
                    )));
                }
                self.data = DataSource::Files {
                    train: train.clone(),
                    test: test.clone(),
                };
            }
            (None, None) => {}
            _ => return Err(Error::Config("train_files and test_files must be given together".into())),
        }
        let synthetic_keys = flat.m.is_some()
            || flat.n.is_some()
            || flat.true_ranks.is_some()
            || flat.samples.is_some()
            || flat.noise_levels.is_some()
            || flat.noise_scale.is_some()
            || flat.train_fraction.is_some();
        match &mut self.data {
            DataSource::Synthetic(spec) => {
                set!(
                    m => spec.m,
                    n => spec.n,
                    true_ranks => spec.true_ranks,
                    samples => spec.samples,
                    noise_levels => spec.noise_levels,
                    noise_scale => spec.noise_scale,
                    train_fraction => spec.train_fraction,
                );
            }
            DataSource::Files { .. } if synthetic_keys => {
                return Err(Error::Config(
                    "synthetic-data keys cannot be combined with train_files/test_files".into(),
                ));
            }
            DataSource::Files { .. } => {}
        }

        let clients = self.data.clients();
        if let Some(c) = flat.clients {
            if c != clients {
                return Err(Error::Config(format!("clients = {c} but the data source defines {clients} clients")));
            }
        }
        self.federation.clients = clients;
        self.validate()
    }

    pub fn validate(&self) -> Result<()> {
        if let DataSource::Synthetic(spec) = &self.data {
            spec.validate().map_err(|e| Error::Config(e.to_string()))?;
        }
        if self.data.clients() != self.federation.clients {
            return Err(Error::Config("client count disagrees with the data source".into()));
        }
        self.federation.validate()
    }

    /// Every field spelled out; parsing the result gives back `self`.
    pub fn to_flat(&self) -> FlatConfig {
        let f = &self.federation;
        let mut flat = FlatConfig {
            algorithm: Some(f.algorithm),
            seed: Some(f.seed),
            clients: Some(f.clients),
            total_steps: Some(f.total_steps),
            interval: Some(f.interval),
            batch_size: f.batch_size,
            lower_rate: Some(f.lower_rate),
            upper_rate: Some(f.upper_rate),
            upper_optimizer: Some(f.upper_optimizer),
            weight_decay: Some(f.weight_decay),
            adam_beta1: Some(f.adam_beta1),
            adam_beta2: Some(f.adam_beta2),
            adam_eps: Some(f.adam_eps),
            rank: Some(f.rank),
            client_rank: Some(f.client_rank),
            init: Some(f.init),
            init_std: Some(f.init_std),
            hvp_mode: Some(f.hvp_mode),
            hvp_step: Some(f.hvp_step),
            index_pattern: Some(f.index_pattern),
            lower_steps: Some(f.lower_steps),
            maml_mode: Some(f.maml_mode),
            eff_rank_threshold: Some(f.eff_rank_threshold),
            r_min: Some(f.hetlora.r_min),
            r_max: Some(f.hetlora.r_max),
            gamma: f.hetlora.gamma,
            lambda: Some(f.hetlora.lambda),
            prune_mode: Some(f.hetlora.prune_mode),
            prune_tol_factor: Some(f.hetlora.prune_tol_factor),
            initial_ranks: f.hetlora.initial_ranks.clone(),
            ..FlatConfig::default()
        };
        match &self.data {
            DataSource::Synthetic(spec) => {
                flat.m = Some(spec.m);
                flat.n = Some(spec.n);
                flat.true_ranks = Some(spec.true_ranks.clone());
                flat.samples = Some(spec.samples);
                flat.noise_levels = Some(spec.noise_levels.clone());
                flat.noise_scale = Some(spec.noise_scale);
                flat.train_fraction = Some(spec.train_fraction);
            }
            DataSource::Files { train, test } => {
                flat.train_files = Some(train.clone());
                flat.test_files = Some(test.clone());
            }
        }
        flat
    }

    pub fn to_toml(&self) -> Result<String> {
        self.to_flat().to_toml()
    }
}

/// Defaults of the two-client synthetic study for `algorithm`.
///
/// PF2LoRA: orthogonal Gaussian initialization, `r = 4`, `r̃ = 2`, AdamW at
/// 0.005 upstairs and SGD at 0.002 downstairs. HOMLoRA and Per-FedAvg use
/// rank 6 (the parameter budget of `r + r̃`). HETLoRA starts the clients at
/// ranks 2 and 10 from a zero `B`, with `λ = 0.1` and rank-decay pruning at
/// a re-tuned rate of 0.05.
pub fn synth_defaults(algorithm: Algorithm, seed: u64) -> RunConfig {
    let mut cfg = RunConfig::new(algorithm);
    let f = &mut cfg.federation;
    f.seed = seed;
    match algorithm {
        Algorithm::Pf2lora => {
            f.init = InitScheme::Orthogonal;
            f.rank = 4;
            f.client_rank = 2;
        }
        Algorithm::Homlora | Algorithm::Perfedavg => {
            f.rank = 6;
        }
        Algorithm::Hetlora => {
            f.upper_rate = 0.05;
            f.hetlora.lambda = 0.1;
            f.hetlora.prune_mode = PruneMode::RankDecay;
            f.hetlora.initial_ranks = Some(vec![2, 10]);
        }
    }
    cfg
}
