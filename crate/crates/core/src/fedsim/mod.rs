//! Round-synchronous federated protocol: local training with fusion,
//! reliability scoring, server aggregation and evaluation.

mod client;
mod eval;
mod server;
mod sim;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::fusion::FusionMode;
use crate::nn::ParamSet;

pub use client::{
    fedprox_penalty, local_update, perturb_update, reliability_from_uncertainty, ClientState,
};
pub use eval::{evaluate_mae, ClientEval, EvalResult};
pub use server::{aggregate, aggregation_weights, normalize_reliabilities};
pub use sim::{Execution, Simulation};

/// Server-side strategy selected for a run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregationStrategy {
    /// Uncertainty-guided fusion at clients, reliability-weighted averaging
    /// at the server.
    ReliabilityWeighted,
    /// FedAvg with equal client weights.
    Uniform,
    /// FedAvg weighted by local training-set size.
    DataSize,
    /// Proximal local objective with data-size weighting.
    Fedprox,
}

impl AggregationStrategy {
    pub fn name(self) -> &'static str {
        match self {
            AggregationStrategy::ReliabilityWeighted => "reliability_weighted",
            AggregationStrategy::Uniform => "uniform",
            AggregationStrategy::DataSize => "data_size",
            AggregationStrategy::Fedprox => "fedprox",
        }
    }
}

/// How client updates are weighted at the server.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Weighting {
    Reliability,
    Uniform,
    DataSize,
}

/// Component switches; only meaningful for
/// [`AggregationStrategy::ReliabilityWeighted`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Ablation {
    pub ua_fusion: bool,
    pub rel_agg: bool,
}

impl Default for Ablation {
    fn default() -> Self {
        Self {
            ua_fusion: true,
            rel_agg: true,
        }
    }
}

/// Everything a client and the server need to know about the protocol.
#[derive(Clone, Debug, PartialEq)]
pub struct ProtocolConfig {
    pub fusion: FusionMode,
    pub weighting: Weighting,
    /// Proximal coefficient; 0 disables the term.
    pub prox_mu: f64,
    pub local_epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub passes: usize,
    pub epsilon: f64,
    /// Cap on training samples used to estimate a client's mean uncertainty.
    pub uncertainty_samples: usize,
    pub share_encoders: bool,
    /// Perturbation scale applied to noisy clients' uploads.
    pub gamma: f64,
    /// Fraction of clients selected per round.
    pub participation: f64,
    /// Start each prediction head's bias at the client's mean training label.
    pub init_head_bias: bool,
}

impl ProtocolConfig {
    /// Resolves a strategy plus ablation switches into concrete fusion and
    /// weighting rules. Baselines always use uniform fusion; disabling
    /// reliability aggregation falls back to equal weights.
    pub fn for_strategy(
        strategy: AggregationStrategy,
        ablation: Ablation,
        fedprox_mu: f64,
    ) -> Self {
        let (fusion, weighting, prox_mu) = match strategy {
            AggregationStrategy::ReliabilityWeighted => (
                if ablation.ua_fusion {
                    FusionMode::Uncertainty
                } else {
                    FusionMode::Uniform
                },
                if ablation.rel_agg {
                    Weighting::Reliability
                } else {
                    Weighting::Uniform
                },
                0.0,
            ),
            AggregationStrategy::Uniform => (FusionMode::Uniform, Weighting::Uniform, 0.0),
            AggregationStrategy::DataSize => (FusionMode::Uniform, Weighting::DataSize, 0.0),
            AggregationStrategy::Fedprox => (FusionMode::Uniform, Weighting::DataSize, fedprox_mu),
        };
        Self {
            fusion,
            weighting,
            prox_mu,
            ..Self::default()
        }
    }
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        Self {
            fusion: FusionMode::Uncertainty,
            weighting: Weighting::Reliability,
            prox_mu: 0.0,
            local_epochs: 5,
            batch_size: 32,
            lr: 1e-3,
            passes: 5,
            epsilon: 1e-8,
            uncertainty_samples: 256,
            share_encoders: false,
            gamma: 1.0,
            participation: 1.0,
            init_head_bias: true,
        }
    }
}

/// What a client uploads after local training.
#[derive(Clone, Debug, PartialEq)]
pub struct ClientUpdate {
    pub client_id: String,
    pub shared_params: ParamSet,
    pub reliability: f64,
    pub num_samples: usize,
}

/// One line of `rounds.jsonl`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundReport {
    pub round: usize,
    pub train_loss: BTreeMap<String, f64>,
    pub test_mae: f64,
    pub mean_reliability: f64,
    pub weights: BTreeMap<String, f64>,
    /// Mean prediction uncertainty each participating client reported.
    pub client_uncertainty: BTreeMap<String, f64>,
}
