//! Uncertainty-guided fusion of modality representations.
//!
//! Weights are a softmax of negative uncertainties taken over the available
//! modalities only; unavailable modalities get exactly zero weight.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::modality::{Modality, ModalityMask, PerModality};

/// How per-sample fusion weights are chosen.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionMode {
    /// Softmax over negative per-modality uncertainties.
    Uncertainty,
    /// Equal weight on every available modality.
    Uniform,
}

/// Convex weights over modalities. Zero for every unavailable modality.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FusionWeights {
    alpha: [f64; 3],
}

impl FusionWeights {
    #[inline]
    pub fn get(&self, m: Modality) -> f64 {
        self.alpha[m.index()]
    }

    pub fn iter(&self) -> impl Iterator<Item = (Modality, f64)> + '_ {
        Modality::ALL.into_iter().map(|m| (m, self.get(m)))
    }

    /// Modalities with non-zero weight.
    pub fn active(&self) -> impl Iterator<Item = (Modality, f64)> + '_ {
        self.iter().filter(|(_, a)| *a != 0.0)
    }

    pub fn sum(&self) -> f64 {
        self.alpha.iter().sum()
    }
}

/// Softmax of `-u[m]` over available modalities (max-subtracted).
///
/// An available modality whose uncertainty is non-finite is treated as
/// masked, with a warning.
pub fn fusion_weights(u: &PerModality<f64>, mask: &ModalityMask) -> Result<FusionWeights> {
    if mask.is_empty() {
        return Err(Error::DegenerateInput(
            "all modalities are masked; no fusion weights exist".into(),
        ));
    }
    let mut scores = [f64::NEG_INFINITY; 3];
    let mut any = false;
    for m in mask.available() {
        let um = *u
            .get(m)
            .ok_or_else(|| Error::State(format!("no uncertainty for available modality `{m}`")))?;
        if !um.is_finite() {
            log::warn!("uncertainty for modality `{m}` is {um}; treating it as missing");
            continue;
        }
        scores[m.index()] = -um;
        any = true;
    }
    if !any {
        return Err(Error::DegenerateInput(
            "no available modality has a finite uncertainty".into(),
        ));
    }
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut alpha = [0.0; 3];
    let mut total = 0.0;
    for (a, s) in alpha.iter_mut().zip(scores) {
        if s.is_finite() {
            *a = (s - max).exp();
            total += *a;
        }
    }
    for a in alpha.iter_mut() {
        *a /= total;
    }
    Ok(FusionWeights { alpha })
}

/// `1 / |available|` on every available modality.
pub fn uniform_fusion_weights(mask: &ModalityMask) -> Result<FusionWeights> {
    let n = mask.count();
    if n == 0 {
        return Err(Error::DegenerateInput(
            "all modalities are masked; no fusion weights exist".into(),
        ));
    }
    let mut alpha = [0.0; 3];
    for m in mask.available() {
        alpha[m.index()] = 1.0 / n as f64;
    }
    Ok(FusionWeights { alpha })
}

/// `h = sum_m alpha[m] * h[m]`. Modalities with zero weight may be absent
/// from `reps`.
pub fn fuse(reps: &PerModality<Vec<f64>>, alpha: &FusionWeights) -> Result<Vec<f64>> {
    let mut out: Option<Vec<f64>> = None;
    for (m, a) in alpha.active() {
        let h = reps.get(m).ok_or_else(|| {
            Error::State(format!(
                "modality `{m}` has weight {a} but no representation"
            ))
        })?;
        match out.as_mut() {
            None => out = Some(h.iter().map(|v| a * v).collect()),
            Some(acc) => {
                if acc.len() != h.len() {
                    return Err(Error::Shape(format!(
                        "representation of `{m}` has dim {} but others have {}",
                        h.len(),
                        acc.len()
                    )));
                }
                for (o, v) in acc.iter_mut().zip(h) {
                    *o += a * v;
                }
            }
        }
    }
    out.ok_or_else(|| Error::DegenerateInput("fusion weights are all zero".into()))
}
