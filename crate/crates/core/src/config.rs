//! JSON experiment configuration with defaults and range checks.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::datagen::FederationSpec;
use crate::error::{Error, Result};
use crate::fedsim::{Ablation, AggregationStrategy, ProtocolConfig};
use crate::model::Architecture;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub hidden_dim: usize,
    pub shared_dim: usize,
    pub dropout: f64,
    /// Start prediction-head biases at each client's mean training label.
    pub init_head_bias: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden_dim: 128,
            shared_dim: 64,
            dropout: 0.1,
            init_head_bias: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UncertaintyConfig {
    /// Stochastic forward passes per estimate.
    pub passes: usize,
    /// Training samples used for a client's mean uncertainty.
    pub max_samples: usize,
    pub epsilon: f64,
}

impl Default for UncertaintyConfig {
    fn default() -> Self {
        Self {
            passes: 5,
            max_samples: 256,
            epsilon: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub rounds: usize,
    pub local_epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub participation: f64,
    pub share_encoders: bool,
    /// Proximal coefficient used by the `fedprox` strategy.
    pub fedprox_mu: f64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            rounds: 100,
            local_epochs: 5,
            lr: 1e-3,
            batch_size: 32,
            participation: 1.0,
            share_encoders: false,
            fedprox_mu: 0.01,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    /// Perturbation scale for noisy clients' uploads.
    pub gamma: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self { gamma: 1.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset_tag: String,
    pub federation: FederationSpec,
    /// Load clients from this JSONL file instead of generating them.
    pub data_path: Option<PathBuf>,
    pub model: ModelConfig,
    pub uncertainty: UncertaintyConfig,
    pub training: TrainingConfig,
    pub strategy: AggregationStrategy,
    pub ablation: Ablation,
    pub noise: NoiseConfig,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset_tag: "synthetic".into(),
            federation: FederationSpec::default(),
            data_path: None,
            model: ModelConfig::default(),
            uncertainty: UncertaintyConfig::default(),
            training: TrainingConfig::default(),
            strategy: AggregationStrategy::ReliabilityWeighted,
            ablation: Ablation::default(),
            noise: NoiseConfig::default(),
            seeds: vec![1, 2, 3],
            output_dir: PathBuf::from("runs"),
        }
    }
}

/// Inclusive ranges of the integer settings, keyed by their JSON path.
const INT_RANGES: &[(&str, usize, usize)] = &[
    ("federation.num_clients", 2, 10_000),
    ("federation.samples_per_client", 1, 1_000_000),
    ("federation.feature_dim", 1, 4096),
    ("federation.latent_dim", 1, 1024),
    ("model.hidden_dim", 1, 4096),
    ("model.shared_dim", 1, 4096),
    ("uncertainty.passes", 2, 1000),
    ("uncertainty.max_samples", 1, 1_000_000),
    ("training.rounds", 0, 100_000),
    ("training.local_epochs", 0, 10_000),
    ("training.batch_size", 1, 1_000_000),
];

fn range_text(key: &str) -> Option<String> {
    INT_RANGES
        .iter()
        .find(|(k, _, _)| *k == key)
        .map(|(_, lo, hi)| format!("integer in [{lo}, {hi}]"))
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner();
            let mut msg = match path.as_str() {
                "." | "" => inner.to_string(),
                p => format!("{p}: {inner}"),
            };
            if let Some(r) = range_text(&path) {
                msg.push_str(&format!(" (allowed: {r})"));
            }
            Error::Config(msg)
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    fn int_settings(&self) -> [(&'static str, usize); 11] {
        [
            ("federation.num_clients", self.federation.num_clients),
            (
                "federation.samples_per_client",
                self.federation.samples_per_client,
            ),
            ("federation.feature_dim", self.federation.feature_dim),
            ("federation.latent_dim", self.federation.latent_dim),
            ("model.hidden_dim", self.model.hidden_dim),
            ("model.shared_dim", self.model.shared_dim),
            ("uncertainty.passes", self.uncertainty.passes),
            ("uncertainty.max_samples", self.uncertainty.max_samples),
            ("training.rounds", self.training.rounds),
            ("training.local_epochs", self.training.local_epochs),
            ("training.batch_size", self.training.batch_size),
        ]
    }

    pub fn validate(&self) -> Result<()> {
        for (key, value) in self.int_settings() {
            let (_, lo, hi) = INT_RANGES
                .iter()
                .find(|(k, _, _)| *k == key)
                .expect("range table");
            if value < *lo || value > *hi {
                return Err(Error::Config(format!(
                    "{key} = {value} is out of range (allowed: integer in [{lo}, {hi}])"
                )));
            }
        }
        self.federation.validate()?;
        let real = |key: &str, v: f64, ok: bool, allowed: &str| {
            if ok && v.is_finite() {
                Ok(())
            } else {
                Err(Error::Config(format!(
                    "{key} = {v} is out of range (allowed: {allowed})"
                )))
            }
        };
        real(
            "model.dropout",
            self.model.dropout,
            (0.0..1.0).contains(&self.model.dropout),
            "[0, 1)",
        )?;
        real(
            "uncertainty.epsilon",
            self.uncertainty.epsilon,
            self.uncertainty.epsilon > 0.0,
            "> 0",
        )?;
        real(
            "training.lr",
            self.training.lr,
            self.training.lr > 0.0,
            "> 0",
        )?;
        real(
            "training.participation",
            self.training.participation,
            self.training.participation > 0.0 && self.training.participation <= 1.0,
            "(0, 1]",
        )?;
        real(
            "training.fedprox_mu",
            self.training.fedprox_mu,
            self.training.fedprox_mu >= 0.0,
            ">= 0",
        )?;
        real(
            "noise.gamma",
            self.noise.gamma,
            self.noise.gamma >= 0.0,
            ">= 0",
        )?;
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must not be empty".into()));
        }
        if self.dataset_tag.is_empty() {
            return Err(Error::Config("dataset_tag must not be empty".into()));
        }
        Ok(())
    }

    pub fn architecture(&self, feature_dims: [usize; 3]) -> Architecture {
        Architecture {
            feature_dims,
            hidden_dim: self.model.hidden_dim,
            shared_dim: self.model.shared_dim,
            dropout: self.model.dropout,
        }
    }

    pub fn protocol(&self) -> ProtocolConfig {
        ProtocolConfig {
            local_epochs: self.training.local_epochs,
            batch_size: self.training.batch_size,
            lr: self.training.lr,
            passes: self.uncertainty.passes,
            epsilon: self.uncertainty.epsilon,
            uncertainty_samples: self.uncertainty.max_samples,
            share_encoders: self.training.share_encoders,
            gamma: self.noise.gamma,
            participation: self.training.participation,
            init_head_bias: self.model.init_head_bias,
            ..ProtocolConfig::for_strategy(self.strategy, self.ablation, self.training.fedprox_mu)
        }
    }
}
