use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::datagen::ClientDataset;
use crate::error::{Error, Result};
use crate::model::{Architecture, ModelParams};
use crate::nn::ParamSet;
use crate::rng::{tag, Rng};

use super::client::{local_update, ClientState};
use super::eval::{evaluate_client, EvalResult};
use super::{aggregate, ClientUpdate, ProtocolConfig, RoundReport};

/// How client work within a round is scheduled. Results are identical
/// either way.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Execution {
    Serial,
    Parallel { threads: usize },
}

impl Execution {
    /// Reads `FEDUAF_THREADS`; unset or unparsable means one thread per core.
    pub fn from_env() -> Self {
        let threads = std::env::var("FEDUAF_THREADS")
            .ok()
            .and_then(|v| v.trim().parse::<usize>().ok())
            .filter(|&n| n > 0)
            .unwrap_or_else(|| {
                std::thread::available_parallelism()
                    .map(|n| n.get())
                    .unwrap_or(1)
            });
        if threads <= 1 {
            Execution::Serial
        } else {
            Execution::Parallel { threads }
        }
    }
}

/// A federation of clients plus the server's global shared parameters.
pub struct Simulation {
    pub protocol: ProtocolConfig,
    pub seed: u64,
    pub clients: Vec<ClientState>,
    pub global: ParamSet,
    round: usize,
    pool: Option<rayon::ThreadPool>,
}

impl Simulation {
    pub fn new(
        mut datasets: Vec<ClientDataset>,
        arch: &Architecture,
        protocol: ProtocolConfig,
        seed: u64,
        execution: Execution,
    ) -> Result<Self> {
        if datasets.is_empty() {
            return Err(Error::DegenerateInput("federation has no clients".into()));
        }
        if !(protocol.participation > 0.0 && protocol.participation <= 1.0) {
            return Err(Error::Config(format!(
                "training.participation must be in (0, 1], got {}",
                protocol.participation
            )));
        }
        datasets.sort_by(|a, b| a.client_id.cmp(&b.client_id));
        if let Some(w) = datasets
            .windows(2)
            .find(|w| w[0].client_id == w[1].client_id)
        {
            return Err(Error::Validation(format!(
                "duplicate client id {}",
                w[0].client_id
            )));
        }
        let root = Rng::new(seed);
        let global_model =
            ModelParams::init(arch, &mut root.derive(&[tag("init"), tag("global")]))?;
        let global = global_model.export_shared(protocol.share_encoders);

        let mut clients = Vec::with_capacity(datasets.len());
        for data in datasets {
            data.validate()?;
            let mut model =
                ModelParams::init(arch, &mut root.derive(&[tag("init"), tag(&data.client_id)]))?;
            model.import_shared(&global, protocol.share_encoders)?;
            if protocol.init_head_bias {
                let train = data.splits().train;
                if !train.is_empty() {
                    let mean = train.iter().map(|s| s.label).sum::<f64>() / train.len() as f64;
                    model.set_output_bias(mean);
                }
            }
            clients.push(ClientState::new(data, model, protocol.lr)?);
        }
        let pool = match execution {
            Execution::Serial => None,
            Execution::Parallel { threads } => Some(
                rayon::ThreadPoolBuilder::new()
                    .num_threads(threads)
                    .build()
                    .map_err(|e| Error::State(format!("thread pool: {e}")))?,
            ),
        };
        Ok(Self {
            protocol,
            seed,
            clients,
            global,
            round: 0,
            pool,
        })
    }

    /// Rounds completed so far.
    pub fn round(&self) -> usize {
        self.round
    }

    fn selected(&self, round: usize) -> Vec<bool> {
        let k = self.clients.len();
        let mut chosen = vec![true; k];
        if self.protocol.participation < 1.0 {
            let n = ((self.protocol.participation * k as f64).round() as usize).clamp(1, k);
            let mut idx: Vec<usize> = (0..k).collect();
            Rng::new(self.seed)
                .derive(&[tag("select"), round as u64])
                .shuffle(&mut idx);
            chosen = vec![false; k];
            for &i in &idx[..n] {
                chosen[i] = true;
            }
        }
        chosen
    }

    fn run<T: Send>(&self, f: impl FnOnce() -> T + Send) -> T {
        match &self.pool {
            Some(p) => p.install(f),
            None => f(),
        }
    }

    /// Broadcast, local updates, aggregation, then evaluation of the new
    /// global parameters on every client's test split.
    pub fn run_round(&mut self) -> Result<RoundReport> {
        let round = self.round + 1;
        let wrap = |e: Error| Error::Round {
            round,
            error: Box::new(e),
        };
        let selected = self.selected(round);
        let parallel = self.pool.is_some();
        let (global, protocol, seed) = (&self.global, &self.protocol, self.seed);
        let work = |(c, sel): (&mut ClientState, &bool)| -> Option<Result<ClientUpdate>> {
            sel.then(|| local_update(c, global, protocol, seed, round))
        };
        let mut clients = std::mem::take(&mut self.clients);
        let results: Vec<Option<Result<ClientUpdate>>> = if parallel {
            self.run(|| {
                clients
                    .par_iter_mut()
                    .zip(selected.par_iter())
                    .map(work)
                    .collect()
            })
        } else {
            clients.iter_mut().zip(selected.iter()).map(work).collect()
        };
        self.clients = clients;
        let updates: Vec<ClientUpdate> = results
            .into_iter()
            .flatten()
            .collect::<Result<_>>()
            .map_err(wrap)?;

        let (new_global, weights) = aggregate(&updates, self.protocol.weighting).map_err(wrap)?;
        self.global = new_global;
        for c in &mut self.clients {
            c.model
                .import_shared(&self.global, self.protocol.share_encoders)
                .map_err(wrap)?;
        }
        self.round = round;
        let eval = self.evaluate().map_err(wrap)?;

        let mut train_loss = BTreeMap::new();
        let mut client_uncertainty = BTreeMap::new();
        for (c, _) in self.clients.iter().zip(&selected).filter(|(_, s)| **s) {
            train_loss.insert(c.id().to_string(), c.last_train_loss);
            client_uncertainty.insert(c.id().to_string(), c.last_uncertainty);
        }
        let mean_reliability =
            updates.iter().map(|u| u.reliability).sum::<f64>() / updates.len() as f64;
        Ok(RoundReport {
            round,
            train_loss,
            test_mae: eval.mae,
            mean_reliability,
            weights: weights.into_iter().collect(),
            client_uncertainty,
        })
    }

    /// Test MAE of the current models (round 0 means untrained).
    pub fn evaluate(&self) -> Result<EvalResult> {
        let (fusion, passes, seed, round) = (
            self.protocol.fusion,
            self.protocol.passes,
            self.seed,
            self.round,
        );
        let eval_one = |c: &ClientState| {
            let mut rng = c.stream(seed, "eval", round);
            evaluate_client(
                c.id(),
                &c.model,
                c.data.splits().test,
                fusion,
                passes,
                &mut rng,
            )
        };
        let per_client: Vec<_> = if self.pool.is_some() {
            self.run(|| {
                self.clients
                    .par_iter()
                    .map(eval_one)
                    .collect::<Result<Vec<_>>>()
            })?
        } else {
            self.clients
                .iter()
                .map(eval_one)
                .collect::<Result<Vec<_>>>()?
        };
        let mae = per_client.iter().map(|c| c.mae).sum::<f64>() / per_client.len() as f64;
        Ok(EvalResult {
            mae,
            clients: per_client,
        })
    }
}
