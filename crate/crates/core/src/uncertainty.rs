//! Prediction-level uncertainty from repeated dropout-enabled forward passes.
//!
//! Regression uncertainty is the population variance of the `T` stochastic
//! predictions; classification uncertainty is the entropy of the mean
//! predictive distribution. Per-modality uncertainty routes one modality at a
//! time through its encoder and the heads (a single-modality probe).

use crate::datagen::Sample;
use crate::error::{Error, Result};
use crate::fusion::{fusion_weights, uniform_fusion_weights, FusionMode, FusionWeights};
use crate::modality::PerModality;
use crate::model::ModelParams;
use crate::rng::Rng;

pub const DEFAULT_PASSES: usize = 5;

#[derive(Clone, Debug, PartialEq)]
pub struct UncertaintyEstimate {
    /// One entry per available modality.
    pub per_modality: PerModality<f64>,
    /// Variance of full-pipeline predictions.
    pub fused: f64,
    pub passes: usize,
}

fn check_passes(passes: usize) -> Result<()> {
    if passes < 2 {
        return Err(Error::Config(format!(
            "uncertainty needs at least 2 stochastic passes, got {passes}"
        )));
    }
    Ok(())
}

fn check_sample(sample: &Sample) -> Result<()> {
    if sample.mask.is_empty() {
        return Err(Error::DegenerateInput(
            "sample has no available modality".into(),
        ));
    }
    Ok(())
}

/// Population variance (divides by `T`).
pub fn variance_uncertainty(preds: &[f64]) -> Result<f64> {
    check_passes(preds.len())?;
    let n = preds.len() as f64;
    let mean = preds.iter().sum::<f64>() / n;
    let var = preds.iter().map(|p| (p - mean) * (p - mean)).sum::<f64>() / n;
    if !var.is_finite() {
        return Err(Error::Numeric(format!(
            "variance of {preds:?} is not finite"
        )));
    }
    Ok(var)
}

/// Shannon entropy (natural log) of the mean of `probs_per_pass`, with
/// `0 ln 0 = 0`.
pub fn entropy_uncertainty(probs_per_pass: &[Vec<f64>]) -> Result<f64> {
    let first = probs_per_pass
        .first()
        .ok_or_else(|| Error::Validation("no probability vectors".into()))?;
    let classes = first.len();
    if classes == 0 {
        return Err(Error::Validation("empty probability vector".into()));
    }
    let mut mean = vec![0.0; classes];
    for (i, p) in probs_per_pass.iter().enumerate() {
        if p.len() != classes {
            return Err(Error::Validation(format!(
                "pass {i} has {} classes, expected {classes}",
                p.len()
            )));
        }
        if p.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Validation(format!(
                "pass {i} has a negative or non-finite probability"
            )));
        }
        let total: f64 = p.iter().sum();
        if (total - 1.0).abs() > 1e-6 {
            return Err(Error::Validation(format!(
                "pass {i} sums to {total}, not 1"
            )));
        }
        for (m, v) in mean.iter_mut().zip(p) {
            *m += v;
        }
    }
    let t = probs_per_pass.len() as f64;
    Ok(mean
        .iter()
        .map(|m| m / t)
        .filter(|p| *p > 0.0)
        .map(|p| -p * p.ln())
        .sum())
}

/// Per-modality probe uncertainties for every available modality.
pub fn probe_uncertainties(
    model: &ModelParams,
    sample: &Sample,
    passes: usize,
    rng: &mut Rng,
) -> Result<PerModality<f64>> {
    check_passes(passes)?;
    check_sample(sample)?;
    let cache = model.encoder_cache(&sample.features, sample.mask.available())?;
    let mut out = PerModality::new();
    let mut preds = Vec::with_capacity(passes);
    for (m, first) in cache.iter() {
        preds.clear();
        for _ in 0..passes {
            preds.push(model.probe_pass(m, first, rng)?);
        }
        out.insert(m, variance_uncertainty(&preds)?);
    }
    Ok(out)
}

/// Fusion weights for `sample` under `mode`. With a single available modality
/// the weight is 1 whatever its uncertainty, so no probe passes are run.
pub fn sample_fusion_weights(
    model: &ModelParams,
    sample: &Sample,
    mode: FusionMode,
    passes: usize,
    rng: &mut Rng,
) -> Result<FusionWeights> {
    check_sample(sample)?;
    match mode {
        FusionMode::Uniform => uniform_fusion_weights(&sample.mask),
        FusionMode::Uncertainty if sample.mask.count() == 1 => uniform_fusion_weights(&sample.mask),
        FusionMode::Uncertainty => {
            let u = probe_uncertainties(model, sample, passes, rng)?;
            fusion_weights(&u, &sample.mask)
        }
    }
}

/// `passes` dropout-enabled predictions through the full pipeline with fixed
/// fusion weights `alpha`.
pub fn mc_predict_with(
    model: &ModelParams,
    sample: &Sample,
    alpha: &FusionWeights,
    passes: usize,
    rng: &mut Rng,
) -> Result<Vec<f64>> {
    check_passes(passes)?;
    check_sample(sample)?;
    let cache = model.encoder_cache(&sample.features, alpha.active().map(|(m, _)| m))?;
    (0..passes)
        .map(|_| model.stochastic_pass(&cache, alpha, rng))
        .collect()
}

/// Fusion weights for `mode` followed by `passes` stochastic full-pipeline
/// predictions.
pub fn mc_predict(
    model: &ModelParams,
    sample: &Sample,
    mode: FusionMode,
    passes: usize,
    rng: &mut Rng,
) -> Result<Vec<f64>> {
    check_passes(passes)?;
    let alpha = sample_fusion_weights(model, sample, mode, passes, rng)?;
    mc_predict_with(model, sample, &alpha, passes, rng)
}

/// Prediction-level uncertainty `u_i` of one sample under `mode`.
pub fn sample_uncertainty(
    model: &ModelParams,
    sample: &Sample,
    mode: FusionMode,
    passes: usize,
    rng: &mut Rng,
) -> Result<f64> {
    variance_uncertainty(&mc_predict(model, sample, mode, passes, rng)?)
}

/// Per-modality probe uncertainties and the fused uncertainty of the full
/// pipeline under uncertainty-guided fusion.
pub fn modality_uncertainties(
    model: &ModelParams,
    sample: &Sample,
    passes: usize,
    rng: &mut Rng,
) -> Result<UncertaintyEstimate> {
    let per_modality = probe_uncertainties(model, sample, passes, rng)?;
    let alpha = fusion_weights(&per_modality, &sample.mask)?;
    let preds = mc_predict_with(model, sample, &alpha, passes, rng)?;
    Ok(UncertaintyEstimate {
        per_modality,
        fused: variance_uncertainty(&preds)?,
        passes,
    })
}
