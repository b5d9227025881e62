use serde::{Deserialize, Serialize};

use crate::datagen::Sample;
use crate::error::{Error, Result};
use crate::fusion::FusionMode;
use crate::model::ModelParams;
use crate::rng::Rng;
use crate::uncertainty::sample_fusion_weights;

/// Test-set predictions of one client.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClientEval {
    pub client_id: String,
    pub mae: f64,
    pub predictions: Vec<f64>,
    pub labels: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    /// Mean over clients of each client's test MAE.
    pub mae: f64,
    pub clients: Vec<ClientEval>,
}

/// Eval-mode predictions on each client's test samples. Fusion weights come
/// from the same probes used in training (dropout is only active inside the
/// probes). `rngs` supplies one stream per client.
pub fn evaluate_mae(
    clients: &[(&str, &ModelParams, &[Sample])],
    fusion: FusionMode,
    passes: usize,
    rngs: &mut [Rng],
) -> Result<EvalResult> {
    if clients.is_empty() {
        return Err(Error::DegenerateInput("no clients to evaluate".into()));
    }
    if rngs.len() != clients.len() {
        return Err(Error::State(format!(
            "{} rng streams for {} clients",
            rngs.len(),
            clients.len()
        )));
    }
    let mut out = Vec::with_capacity(clients.len());
    for ((id, model, test), rng) in clients.iter().zip(rngs.iter_mut()) {
        out.push(evaluate_client(id, model, test, fusion, passes, rng)?);
    }
    let mae = out.iter().map(|c| c.mae).sum::<f64>() / out.len() as f64;
    Ok(EvalResult { mae, clients: out })
}

pub(crate) fn evaluate_client(
    id: &str,
    model: &ModelParams,
    test: &[Sample],
    fusion: FusionMode,
    passes: usize,
    rng: &mut Rng,
) -> Result<ClientEval> {
    if test.is_empty() {
        return Err(Error::DegenerateInput(format!(
            "client {id} has no test samples"
        )));
    }
    let mut predictions = Vec::with_capacity(test.len());
    let mut labels = Vec::with_capacity(test.len());
    let mut abs_err = 0.0;
    for s in test {
        let alpha = sample_fusion_weights(model, s, fusion, passes, rng)?;
        let p = model.predict(&s.features, &alpha)?;
        abs_err += (p - s.label).abs();
        predictions.push(p);
        labels.push(s.label);
    }
    let mae = abs_err / test.len() as f64;
    if !mae.is_finite() {
        return Err(Error::Numeric(format!(
            "client {id}: non-finite test error"
        )));
    }
    Ok(ClientEval {
        client_id: id.to_string(),
        mae,
        predictions,
        labels,
    })
}
