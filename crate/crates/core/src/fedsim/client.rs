use crate::datagen::ClientDataset;
use crate::error::{Error, Result};
use crate::fusion::FusionMode;
use crate::model::{ModelGrads, ModelParams};
use crate::nn::{mse_loss, AdamState, Mode, ParamSet};
use crate::rng::{tag, Rng};
use crate::uncertainty::{sample_fusion_weights, sample_uncertainty};

use super::{ClientUpdate, ProtocolConfig};

/// A client's persistent state: its data, full local model and optimizer.
#[derive(Clone, Debug)]
pub struct ClientState {
    pub data: ClientDataset,
    pub model: ModelParams,
    pub adam: AdamState,
    /// Mean training loss over the last local epoch.
    pub last_train_loss: f64,
    /// Mean prediction uncertainty from the last local update.
    pub last_uncertainty: f64,
}

impl ClientState {
    pub fn new(data: ClientDataset, model: ModelParams, lr: f64) -> Result<Self> {
        let adam = AdamState::new(&model.tensor_sizes(), lr)?;
        Ok(Self {
            data,
            model,
            adam,
            last_train_loss: f64::NAN,
            last_uncertainty: f64::NAN,
        })
    }

    pub fn id(&self) -> &str {
        &self.data.client_id
    }

    pub fn is_noisy(&self) -> bool {
        self.data.is_noisy
    }

    /// Per-client random stream for `purpose` in `round`. Keyed on the client
    /// id so selection order and thread scheduling do not matter.
    pub(crate) fn stream(&self, seed: u64, purpose: &str, round: usize) -> Rng {
        Rng::new(seed).derive(&[tag(purpose), round as u64, tag(self.id())])
    }
}

/// `r = 1 / (u + eps)`.
pub fn reliability_from_uncertainty(u: f64, eps: f64) -> Result<f64> {
    if !u.is_finite() || u < 0.0 {
        return Err(Error::Numeric(format!(
            "client uncertainty must be finite and non-negative, got {u}"
        )));
    }
    Ok(1.0 / (u + eps))
}

/// Adds zero-mean Gaussian noise with std `gamma * std(tensor)` to every
/// tensor. Constant tensors are left untouched.
pub fn perturb_update(params: &ParamSet, gamma: f64, rng: &mut Rng) -> Result<ParamSet> {
    if !gamma.is_finite() || gamma < 0.0 {
        return Err(Error::Config(format!(
            "noise gamma must be finite and >= 0, got {gamma}"
        )));
    }
    let mut out = params.clone();
    for t in &mut out.tensors {
        let n = t.values.len();
        if n == 0 {
            continue;
        }
        let mean = t.values.iter().sum::<f64>() / n as f64;
        let var = t
            .values
            .iter()
            .map(|v| (v - mean) * (v - mean))
            .sum::<f64>()
            / n as f64;
        let scale = gamma * var.sqrt();
        if scale == 0.0 {
            continue;
        }
        for v in &mut t.values {
            *v += scale * rng.normal();
        }
    }
    Ok(out)
}

/// Proximal term `mu/2 * ||local - global||^2` and its gradient
/// `mu * (local - global)` per tensor.
pub fn fedprox_penalty(
    local: &[&[f64]],
    global: &[&[f64]],
    mu: f64,
) -> Result<(f64, Vec<Vec<f64>>)> {
    if local.len() != global.len() {
        return Err(Error::Shape(format!(
            "proximal term: {} local tensors vs {} global",
            local.len(),
            global.len()
        )));
    }
    let mut penalty = 0.0;
    let mut grads = Vec::with_capacity(local.len());
    for (i, (l, g)) in local.iter().zip(global).enumerate() {
        if l.len() != g.len() {
            return Err(Error::Shape(format!(
                "proximal term: tensor {i} has {} local values vs {} global",
                l.len(),
                g.len()
            )));
        }
        let mut grad = Vec::with_capacity(l.len());
        for (a, b) in l.iter().zip(g.iter()) {
            let d = a - b;
            penalty += d * d;
            grad.push(mu * d);
        }
        grads.push(grad);
    }
    Ok((0.5 * mu * penalty, grads))
}

/// One round of local work: adopt the global shared parameters, train for
/// the configured epochs, perturb the upload if the client is noisy, and
/// score the resulting model's reliability on its training data.
pub fn local_update(
    client: &mut ClientState,
    global: &ParamSet,
    cfg: &ProtocolConfig,
    seed: u64,
    round: usize,
) -> Result<ClientUpdate> {
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch_size must be >= 1".into()));
    }
    client.model.import_shared(global, cfg.share_encoders)?;
    let global_tensors: Vec<&[f64]> = global.tensors.iter().map(|t| t.values.as_slice()).collect();

    let mut train_rng = client.stream(seed, "train", round);
    let mut probe_rng = client.stream(seed, "probe", round);
    let n_train = client.data.splits().train.len();
    let mut order: Vec<usize> = (0..n_train).collect();
    let mut grads = ModelGrads::zeros_like(&client.model);
    let mut epoch_loss = f64::NAN;

    for _ in 0..cfg.local_epochs {
        train_rng.shuffle(&mut order);
        let mut loss_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            grads.scale(0.0);
            let inv = 1.0 / batch.len() as f64;
            for &i in batch {
                let sample = &client.data.splits().train[i];
                let alpha = sample_fusion_weights(
                    &client.model,
                    sample,
                    cfg.fusion,
                    cfg.passes,
                    &mut probe_rng,
                )
                .map_err(|e| diverged(client.id(), round, e))?;
                let (pred, tape) = client
                    .model
                    .forward(&sample.features, &alpha, Mode::Train, &mut train_rng)
                    .map_err(|e| diverged(client.id(), round, e))?;
                let (loss, d_pred) = mse_loss(pred, sample.label)?;
                if !loss.is_finite() {
                    return Err(Error::Numeric(format!(
                        "client {} diverged in round {round}: non-finite loss",
                        client.id()
                    )));
                }
                loss_sum += loss;
                client
                    .model
                    .backward_accumulate(&tape, d_pred * inv, &mut grads)?;
            }
            if cfg.prox_mu > 0.0 {
                let local = client.model.shared_tensors(cfg.share_encoders);
                let (_, prox) = fedprox_penalty(&local, &global_tensors, cfg.prox_mu)?;
                for (g, p) in grads
                    .shared_tensors_mut(cfg.share_encoders)
                    .into_iter()
                    .zip(&prox)
                {
                    for (a, b) in g.iter_mut().zip(p) {
                        *a += b;
                    }
                }
            }
            let grad_refs = grads.tensors();
            client
                .adam
                .step(&mut client.model.tensors_mut(), &grad_refs)
                .map_err(|e| diverged(client.id(), round, e))?;
        }
        epoch_loss = loss_sum / n_train.max(1) as f64;
    }
    if cfg.local_epochs > 0 && !epoch_loss.is_finite() {
        return Err(Error::Numeric(format!(
            "client {} diverged in round {round}: non-finite loss",
            client.id()
        )));
    }
    client.last_train_loss = epoch_loss;

    let mut upload = client.model.export_shared(cfg.share_encoders);
    if client.is_noisy() {
        upload = perturb_update(&upload, cfg.gamma, &mut client.stream(seed, "noise", round))?;
        client.model.import_shared(&upload, cfg.share_encoders)?;
    }

    let u = client_uncertainty(client, cfg, seed, round)
        .map_err(|e| diverged(client.id(), round, e))?;
    client.last_uncertainty = u;
    let reliability = reliability_from_uncertainty(u, cfg.epsilon)
        .map_err(|e| Error::Numeric(format!("client {} in round {round}: {e}", client.id())))?;

    Ok(ClientUpdate {
        client_id: client.id().to_string(),
        shared_params: upload,
        reliability,
        num_samples: n_train,
    })
}

fn diverged(id: &str, round: usize, e: Error) -> Error {
    match e {
        Error::Numeric(msg) => {
            Error::Numeric(format!("client {id} diverged in round {round}: {msg}"))
        }
        other => other,
    }
}

/// Mean prediction uncertainty over (a seeded subset of) the training split.
fn client_uncertainty(
    client: &ClientState,
    cfg: &ProtocolConfig,
    seed: u64,
    round: usize,
) -> Result<f64> {
    let train = client.data.splits().train;
    if train.is_empty() {
        return Err(Error::DegenerateInput(format!(
            "client {} has no training samples",
            client.id()
        )));
    }
    let mut rng = client.stream(seed, "reliability", round);
    let mut idx: Vec<usize> = (0..train.len()).collect();
    if idx.len() > cfg.uncertainty_samples {
        rng.shuffle(&mut idx);
        idx.truncate(cfg.uncertainty_samples.max(1));
        idx.sort_unstable();
    }
    let fusion: FusionMode = cfg.fusion;
    let mut total = 0.0;
    for &i in &idx {
        total += sample_uncertainty(&client.model, &train[i], fusion, cfg.passes, &mut rng)?;
    }
    Ok(total / idx.len() as f64)
}
