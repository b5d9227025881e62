use crate::error::{Error, Result};
use crate::nn::ParamSet;

use super::{ClientUpdate, Weighting};

/// `w_k = r_k / sum r`, in the order given.
pub fn normalize_reliabilities(reliabilities: &[f64]) -> Result<Vec<f64>> {
    if reliabilities.is_empty() {
        return Err(Error::Protocol("no client updates to weight".into()));
    }
    if let Some(r) = reliabilities.iter().find(|r| !r.is_finite() || **r <= 0.0) {
        return Err(Error::Protocol(format!(
            "reliability must be finite and positive, got {r}"
        )));
    }
    let total: f64 = reliabilities.iter().sum();
    if !total.is_finite() {
        return Err(Error::Numeric("sum of reliabilities overflowed".into()));
    }
    Ok(reliabilities.iter().map(|r| r / total).collect())
}

/// Aggregation weights for `updates` (in the order given).
pub fn aggregation_weights(updates: &[&ClientUpdate], weighting: Weighting) -> Result<Vec<f64>> {
    if updates.is_empty() {
        return Err(Error::Protocol("no client updates to weight".into()));
    }
    match weighting {
        Weighting::Reliability => {
            let r: Vec<f64> = updates.iter().map(|u| u.reliability).collect();
            normalize_reliabilities(&r)
        }
        Weighting::Uniform => Ok(vec![1.0 / updates.len() as f64; updates.len()]),
        Weighting::DataSize => {
            let total: usize = updates.iter().map(|u| u.num_samples).sum();
            if total == 0 {
                return Err(Error::Protocol(
                    "data-size weighting with no training samples".into(),
                ));
            }
            Ok(updates
                .iter()
                .map(|u| u.num_samples as f64 / total as f64)
                .collect())
        }
    }
}

/// Weighted average of the uploaded parameters. Updates are combined in
/// ascending `client_id` order so the result does not depend on arrival
/// order. Returns the new parameters and each client's weight.
pub fn aggregate(
    updates: &[ClientUpdate],
    weighting: Weighting,
) -> Result<(ParamSet, Vec<(String, f64)>)> {
    let mut sorted: Vec<&ClientUpdate> = updates.iter().collect();
    sorted.sort_by(|a, b| a.client_id.cmp(&b.client_id));
    if let Some(w) = sorted.windows(2).find(|w| w[0].client_id == w[1].client_id) {
        return Err(Error::Protocol(format!(
            "duplicate update from {}",
            w[0].client_id
        )));
    }
    let weights = aggregation_weights(&sorted, weighting)?;
    let first = &sorted[0].shared_params;
    for u in &sorted[1..] {
        if !u.shared_params.same_layout(first) {
            return Err(Error::Protocol(format!(
                "update from {} does not match the layout of {}",
                u.client_id, sorted[0].client_id
            )));
        }
    }

    let mut out = first.clone();
    for (t, tensor) in out.tensors.iter_mut().enumerate() {
        for (j, v) in tensor.values.iter_mut().enumerate() {
            let mut acc = 0.0;
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for (u, w) in sorted.iter().zip(&weights) {
                let x = u.shared_params.tensors[t].values[j];
                acc += w * x;
                lo = lo.min(x);
                hi = hi.max(x);
            }
            // Rounding in the weighted sum can step just outside the hull.
            *v = acc.clamp(lo, hi);
        }
    }
    let named = sorted
        .iter()
        .map(|u| u.client_id.clone())
        .zip(weights)
        .collect();
    Ok((out, named))
}
