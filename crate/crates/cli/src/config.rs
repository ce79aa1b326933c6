//! Experiment configuration files (TOML) and their canonical hash.

use std::path::{Path, PathBuf};

use fima_core::data::PartitionMethod;
use fima_core::federation::{AdaptiveParams, Aggregator, FederationConfig, ImaConfig, MildExploration};
use fima_core::nn::{Activation, LossKind, LrSchedule, ModelSpec};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    pub dataset: DatasetConfig,
    pub model: ModelConfig,
    pub partition: PartitionConfig,
    pub federation: FederationBlock,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ima: Option<ImaBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decomposition: Option<DecompositionBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub landscape: Option<LandscapeBlock>,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("runs/default")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetConfig {
    Synthetic {
        n_classes: usize,
        n_per_class: usize,
        test_per_class: usize,
        dim: usize,
        separation: f64,
    },
    Csv {
        train: PathBuf,
        test: PathBuf,
        n_classes: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActivationName {
    Relu,
    Identity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossName {
    Mse,
    CrossEntropy,
}

/// Input and output widths come from the dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default)]
    pub hidden: Vec<usize>,
    #[serde(default = "default_activation")]
    pub activation: ActivationName,
    #[serde(default = "default_loss")]
    pub loss: LossName,
}

fn default_activation() -> ActivationName {
    ActivationName::Relu
}

fn default_loss() -> LossName {
    LossName::CrossEntropy
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionConfig {
    pub num_clients: usize,
    pub method: PartitionMethodConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PartitionMethodConfig {
    Iid,
    Shards { classes_per_client: usize },
    Dirichlet { alpha: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LrConfig {
    Constant { lr: f64 },
    Exponential { lr0: f64, rate: f64 },
    Cyclic { lr_hi: f64, lr_lo: f64, period: u32 },
    EpochDecay { lr: f64, epochs0: u32, rounds_per_drop: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AggregatorConfig {
    #[default]
    Fedavg,
    Fednova,
    Fedadam {
        #[serde(default = "d_eta")]
        eta: f64,
        #[serde(default = "d_beta1")]
        beta1: f64,
        #[serde(default = "d_beta2")]
        beta2: f64,
        #[serde(default = "d_tau")]
        tau: f64,
    },
    Fedyogi {
        #[serde(default = "d_eta")]
        eta: f64,
        #[serde(default = "d_beta1")]
        beta1: f64,
        #[serde(default = "d_beta2")]
        beta2: f64,
        #[serde(default = "d_tau")]
        tau: f64,
    },
    Fedgma {
        #[serde(default = "d_epsilon")]
        epsilon: f64,
        #[serde(default = "d_one")]
        server_lr: f64,
    },
}

fn d_eta() -> f64 {
    AdaptiveParams::default().eta
}
fn d_beta1() -> f64 {
    AdaptiveParams::default().beta1
}
fn d_beta2() -> f64 {
    AdaptiveParams::default().beta2
}
fn d_tau() -> f64 {
    AdaptiveParams::default().tau
}
fn d_epsilon() -> f64 {
    Aggregator::FEDGMA_DEFAULT_EPSILON
}
fn d_one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FederationBlock {
    pub participation: f64,
    pub rounds: u32,
    pub local_epochs: u32,
    pub batch_size: usize,
    pub lr: LrConfig,
    #[serde(default)]
    pub momentum: f64,
    #[serde(default)]
    pub prox_mu: f64,
    #[serde(default)]
    pub aggregator: AggregatorConfig,
    /// Rounds between rows of the metrics file; the final round is always kept.
    #[serde(default = "d_every")]
    pub eval_every: u32,
    /// Rounds between periodic checkpoints; zero keeps only the final models.
    #[serde(default)]
    pub checkpoint_every: u32,
}

fn d_every() -> u32 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImaBlock {
    pub start_round: u32,
    pub window: usize,
    #[serde(default)]
    pub mild: MildConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MildConfig {
    /// Keep the base schedule.
    Base,
    /// Exponential decay from the learning rate in effect at the start round.
    Decay { rate: f64 },
    /// Fresh schedule counted from the start round.
    Schedule { schedule: LrConfig },
}

impl Default for MildConfig {
    fn default() -> Self {
        MildConfig::Decay { rate: 0.03 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EnsembleSourceConfig {
    /// Every client retrained on its own stream at each of the last
    /// `samples` rounds.
    RoundClients { samples: usize },
    /// `samples` independently seeded retrainings from one broadcast model.
    SeedReplicas { samples: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecompositionBlock {
    #[serde(default = "d_true")]
    pub enabled: bool,
    pub source: EnsembleSourceConfig,
    /// Rounds between decompositions.
    pub every: u32,
}

fn d_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LandscapeBlock {
    /// Checkpoint files: two for a line scan, three for a plane.
    #[serde(default)]
    pub anchors: Vec<PathBuf>,
    #[serde(default = "d_points")]
    pub points: usize,
    #[serde(default = "d_beta_range")]
    pub beta_range: [f64; 2],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a_range: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b_range: Option<[f64; 2]>,
    #[serde(default = "d_resolution")]
    pub resolution: [usize; 2],
}

fn d_points() -> usize {
    11
}
fn d_beta_range() -> [f64; 2] {
    [0.0, 1.0]
}
fn d_resolution() -> [usize; 2] {
    [21, 21]
}

impl LrConfig {
    pub fn to_core(self) -> LrSchedule {
        match self {
            LrConfig::Constant { lr } => LrSchedule::Constant { lr },
            LrConfig::Exponential { lr0, rate } => LrSchedule::Exponential { lr0, rate },
            LrConfig::Cyclic { lr_hi, lr_lo, period } => LrSchedule::Cyclic { lr_hi, lr_lo, period },
            LrConfig::EpochDecay { lr, epochs0, rounds_per_drop } => LrSchedule::EpochDecay {
                lr,
                epochs0,
                rounds_per_drop,
            },
        }
    }
}

impl AggregatorConfig {
    pub fn to_core(self) -> Aggregator {
        match self {
            AggregatorConfig::Fedavg => Aggregator::FedAvg,
            AggregatorConfig::Fednova => Aggregator::FedNova,
            AggregatorConfig::Fedadam { eta, beta1, beta2, tau } => {
                Aggregator::FedAdam(AdaptiveParams { eta, beta1, beta2, tau })
            }
            AggregatorConfig::Fedyogi { eta, beta1, beta2, tau } => {
                Aggregator::FedYogi(AdaptiveParams { eta, beta1, beta2, tau })
            }
            AggregatorConfig::Fedgma { epsilon, server_lr } => Aggregator::FedGma { epsilon, server_lr },
        }
    }
}

impl MildConfig {
    pub fn to_core(self) -> MildExploration {
        match self {
            MildConfig::Base => MildExploration::Base,
            MildConfig::Decay { rate } => MildExploration::Decay { rate },
            MildConfig::Schedule { schedule } => MildExploration::Schedule(schedule.to_core()),
        }
    }
}

impl PartitionMethodConfig {
    pub fn to_core(self) -> PartitionMethod {
        match self {
            PartitionMethodConfig::Iid => PartitionMethod::Iid,
            PartitionMethodConfig::Shards { classes_per_client } => PartitionMethod::Shards { classes_per_client },
            PartitionMethodConfig::Dirichlet { alpha } => PartitionMethod::Dirichlet { alpha },
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> CliResult<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string().trim().replace('\n', " ")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes to TOML")
    }

    pub fn validate(&self) -> CliResult<()> {
        self.federation_config()?.validate()?;
        self.model_spec()?;
        if self.federation.eval_every == 0 {
            return Err(CliError::Config("federation.eval_every must be >= 1".into()));
        }
        if let Some(d) = &self.decomposition {
            let samples = match d.source {
                EnsembleSourceConfig::RoundClients { samples } | EnsembleSourceConfig::SeedReplicas { samples } => samples,
            };
            if samples == 0 || d.every == 0 {
                return Err(CliError::Config("decomposition needs samples >= 1 and every >= 1".into()));
            }
        }
        if let Some(l) = &self.landscape {
            if l.points < 2 || l.resolution.iter().any(|&r| r < 2) {
                return Err(CliError::Config("landscape points and resolution must be >= 2".into()));
            }
        }
        Ok(())
    }

    pub fn input_dim_and_classes(&self) -> (Option<usize>, usize) {
        match &self.dataset {
            DatasetConfig::Synthetic { n_classes, dim, .. } => (Some(*dim), *n_classes),
            DatasetConfig::Csv { n_classes, .. } => (None, *n_classes),
        }
    }

    /// Model spec for a dataset of dimension `dim`.
    pub fn model_spec_for(&self, dim: usize) -> CliResult<ModelSpec> {
        let (_, classes) = self.input_dim_and_classes();
        let mut widths = vec![dim];
        widths.extend(&self.model.hidden);
        widths.push(classes);
        let act = match self.model.activation {
            ActivationName::Relu => Activation::Relu,
            ActivationName::Identity => Activation::Identity,
        };
        let loss = match self.model.loss {
            LossName::Mse => LossKind::Mse,
            LossName::CrossEntropy => LossKind::SoftmaxCrossEntropy,
        };
        Ok(ModelSpec::mlp(&widths, act, loss)?)
    }

    /// Model spec when the input dimension is known from the config alone.
    pub fn model_spec(&self) -> CliResult<Option<ModelSpec>> {
        match self.input_dim_and_classes().0 {
            Some(dim) => Ok(Some(self.model_spec_for(dim)?)),
            None => Ok(None),
        }
    }

    pub fn federation_config(&self) -> CliResult<FederationConfig> {
        let f = &self.federation;
        let cfg = FederationConfig {
            num_clients: self.partition.num_clients,
            participation: f.participation,
            rounds: f.rounds,
            local_epochs: f.local_epochs,
            batch_size: f.batch_size,
            lr_schedule: f.lr.to_core(),
            momentum: f.momentum,
            aggregator: f.aggregator.to_core(),
            prox_mu: f.prox_mu,
            ima: self.ima.as_ref().map(|i| ImaConfig {
                start_round: i.start_round,
                window: i.window,
                mild: i.mild.to_core(),
            }),
            checkpoint_every: f.checkpoint_every,
            seed: self.seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Canonical JSON: sorted keys, output directory left out.
    pub fn canonical_json(&self) -> serde_json::Value {
        let mut v = serde_json::to_value(self).expect("config serializes to JSON");
        if let Some(map) = v.as_object_mut() {
            map.remove("out_dir");
        }
        v
    }

    /// SHA-256 of the canonical JSON, hex encoded.
    pub fn hash(&self) -> String {
        let text = serde_json::to_string(&self.canonical_json()).expect("JSON value serializes");
        hex(&Sha256::digest(text.as_bytes()))
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Dotted paths of the leaves where two JSON values differ.
pub fn json_diff(a: &serde_json::Value, b: &serde_json::Value) -> Vec<String> {
    fn walk(a: &serde_json::Value, b: &serde_json::Value, path: &str, out: &mut Vec<String>) {
        use serde_json::Value;
        match (a, b) {
            (Value::Object(x), Value::Object(y)) => {
                let mut keys: Vec<&String> = x.keys().chain(y.keys()).collect();
                keys.sort();
                keys.dedup();
                for k in keys {
                    let p = if path.is_empty() { k.clone() } else { format!("{path}.{k}") };
                    match (x.get(k), y.get(k)) {
                        (Some(u), Some(v)) => walk(u, v, &p, out),
                        _ => out.push(p),
                    }
                }
            }
            _ if a != b => out.push(path.to_string()),
            _ => {}
        }
    }
    let mut out = Vec::new();
    walk(a, b, "", &mut out);
    out
}
