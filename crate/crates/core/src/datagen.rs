//! Synthetic federated multimodal regression data, missing-modality
//! injection, noisy-client designation and JSONL ingestion.
//!
//! Generative process for client `k` (one "speaker"):
//!
//! - latent `z ~ N(0, I_latent)`
//! - label `y = clip(w . z + mu_k + eta, -3, 3)`, `eta ~ N(0, 0.1^2)`,
//!   client offset `mu_k ~ N(0, (2 kappa)^2)`
//! - features `x^m = A_m z + sigma_m eps`, with `sigma_a = 2 sigma_v` and
//!   `sigma_t = 0.5 sigma_v`
//!
//! `A_m` and `w` are drawn once per federation seed. Every client draws from its
//! own derived stream, so changing one knob (for example `kappa`) leaves the
//! other random draws untouched.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::modality::{Modality, ModalityMask, PerModality};
use crate::rng::{tag, Rng};

pub const LABEL_MIN: f64 = -3.0;
pub const LABEL_MAX: f64 = 3.0;
const LABEL_NOISE_STD: f64 = 0.1;

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    /// Present exactly for the available modalities.
    pub features: PerModality<Vec<f64>>,
    pub mask: ModalityMask,
    pub label: f64,
}

impl Sample {
    pub fn validate(&self) -> Result<()> {
        if !(LABEL_MIN..=LABEL_MAX).contains(&self.label) {
            return Err(Error::Validation(format!(
                "label {} outside [{LABEL_MIN}, {LABEL_MAX}]",
                self.label
            )));
        }
        if self.mask.is_empty() {
            return Err(Error::Validation("sample has no available modality".into()));
        }
        for m in Modality::ALL {
            match (self.mask.is_available(m), self.features.get(m)) {
                (true, None) => {
                    return Err(Error::Validation(format!(
                        "mask {m}=1 but no `{m}` features"
                    )))
                }
                (false, Some(_)) => {
                    return Err(Error::Validation(format!(
                        "mask {m}=0 but `{m}` features are present"
                    )))
                }
                (true, Some(x)) => {
                    if x.iter().any(|v| !v.is_finite()) {
                        return Err(Error::Validation(format!("non-finite `{m}` feature")));
                    }
                }
                (false, None) => {}
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClientDataset {
    pub client_id: String,
    pub samples: Vec<Sample>,
    pub is_noisy: bool,
}

/// Borrowed 70/10/20 train/validation/test views.
#[derive(Clone, Copy, Debug)]
pub struct Splits<'a> {
    pub train: &'a [Sample],
    pub val: &'a [Sample],
    pub test: &'a [Sample],
}

impl ClientDataset {
    /// Consecutive 70/10/20 split in stored order (at least one training
    /// sample when non-empty).
    pub fn splits(&self) -> Splits<'_> {
        let n = self.samples.len();
        let mut n_train = n * 7 / 10;
        if n_train == 0 && n > 0 {
            n_train = 1;
        }
        let n_val = (n / 10).min(n - n_train);
        let (train, rest) = self.samples.split_at(n_train);
        let (val, test) = rest.split_at(n_val);
        Splits { train, val, test }
    }

    pub fn validate(&self) -> Result<()> {
        if self.samples.is_empty() {
            return Err(Error::Validation(format!(
                "client `{}` has no samples",
                self.client_id
            )));
        }
        for (i, s) in self.samples.iter().enumerate() {
            s.validate().map_err(|e| {
                Error::Validation(format!("client `{}` sample {i}: {e}", self.client_id))
            })?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FederationSpec {
    pub num_clients: usize,
    pub samples_per_client: usize,
    /// Non-IID intensity `kappa` in `[0, 1]`.
    pub noniid_intensity: f64,
    /// Per-(sample, modality) drop probability in `[0, 1)`.
    pub missing_ratio: f64,
    /// Fraction of clients whose uploads are perturbed, in `[0, 1]`.
    pub noisy_ratio: f64,
    pub feature_dim: usize,
    pub latent_dim: usize,
    /// Visual feature noise std; audio uses twice this, text half.
    pub visual_noise_std: f64,
    pub seed: u64,
}

impl Default for FederationSpec {
    fn default() -> Self {
        Self {
            num_clients: 10,
            samples_per_client: 200,
            noniid_intensity: 0.2,
            missing_ratio: 0.2,
            noisy_ratio: 0.0,
            feature_dim: 20,
            latent_dim: 8,
            visual_noise_std: 1.0,
            seed: 1,
        }
    }
}

impl FederationSpec {
    /// Parses and validates a JSON spec; omitted keys take their defaults.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let spec: Self = serde_path_to_error::deserialize(de)
            .map_err(|e| Error::Config(format!("federation {}: {}", e.path(), e.inner())))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, value: String, allowed: &str| {
            Err(Error::Config(format!(
                "federation.{key} = {value} is out of range (allowed: {allowed})"
            )))
        };
        if self.num_clients < 2 {
            return bad("num_clients", self.num_clients.to_string(), ">= 2");
        }
        if self.samples_per_client < 1 {
            return bad(
                "samples_per_client",
                self.samples_per_client.to_string(),
                ">= 1",
            );
        }
        if !(0.0..=1.0).contains(&self.noniid_intensity) {
            return bad(
                "noniid_intensity",
                self.noniid_intensity.to_string(),
                "[0, 1]",
            );
        }
        if !(0.0..1.0).contains(&self.missing_ratio) {
            return bad("missing_ratio", self.missing_ratio.to_string(), "[0, 1)");
        }
        if !(0.0..=1.0).contains(&self.noisy_ratio) {
            return bad("noisy_ratio", self.noisy_ratio.to_string(), "[0, 1]");
        }
        if self.feature_dim < 1 {
            return bad("feature_dim", self.feature_dim.to_string(), ">= 1");
        }
        if self.latent_dim < 1 {
            return bad("latent_dim", self.latent_dim.to_string(), ">= 1");
        }
        if !(self.visual_noise_std >= 0.0 && self.visual_noise_std.is_finite()) {
            return bad(
                "visual_noise_std",
                self.visual_noise_std.to_string(),
                ">= 0, finite",
            );
        }
        Ok(())
    }
}

/// Noise std for modality `m` relative to the visual noise std.
pub fn modality_noise_std(m: Modality, visual: f64) -> f64 {
    match m {
        Modality::Visual => visual,
        Modality::Audio => 2.0 * visual,
        Modality::Text => 0.5 * visual,
    }
}

/// The fixed ground-truth process shared by every client of a federation.
#[derive(Clone, Debug)]
pub struct GroundTruth {
    pub label_weights: Vec<f64>,
    /// Row-major `feature_dim x latent_dim` projection per modality.
    pub projections: PerModality<Vec<f64>>,
    pub feature_dim: usize,
    pub latent_dim: usize,
    pub visual_noise_std: f64,
}

impl GroundTruth {
    pub fn new(spec: &FederationSpec) -> Self {
        let mut rng = Rng::new(spec.seed).derive(&[tag("ground-truth")]);
        let d = spec.latent_dim;
        let proj_std = 1.0 / (d as f64).sqrt();
        let projections = PerModality::from_fn(|_| {
            (0..spec.feature_dim * d)
                .map(|_| proj_std * rng.normal())
                .collect()
        });
        let mut w: Vec<f64> = (0..d).map(|_| rng.normal()).collect();
        let norm = w
            .iter()
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
            .max(f64::MIN_POSITIVE);
        w.iter_mut().for_each(|v| *v /= norm);
        Self {
            label_weights: w,
            projections,
            feature_dim: spec.feature_dim,
            latent_dim: d,
            visual_noise_std: spec.visual_noise_std,
        }
    }

    /// Noise-free regression target before the client offset.
    pub fn signal(&self, z: &[f64]) -> f64 {
        self.label_weights.iter().zip(z).map(|(w, v)| w * v).sum()
    }

    /// `A_m z + noise_scale * sigma_m * eps`.
    pub fn features(&self, m: Modality, z: &[f64], noise_scale: f64, rng: &mut Rng) -> Vec<f64> {
        let a = self.projections.get(m).expect("projection per modality");
        let sigma = noise_scale * modality_noise_std(m, self.visual_noise_std);
        a.chunks_exact(self.latent_dim)
            .map(|row| {
                let clean: f64 = row.iter().zip(z).map(|(r, v)| r * v).sum();
                clean + sigma * rng.normal()
            })
            .collect()
    }
}

pub fn client_id(index: usize, num_clients: usize) -> String {
    let width = num_clients.saturating_sub(1).to_string().len().max(2);
    format!("client-{index:0width$}")
}

/// Clean federation: every modality available, no client marked noisy.
pub fn generate_federation(spec: &FederationSpec) -> Result<Vec<ClientDataset>> {
    spec.validate()?;
    let truth = GroundTruth::new(spec);
    let root = Rng::new(spec.seed);
    let clients = (0..spec.num_clients)
        .map(|k| {
            let mut rng = root.derive(&[tag("client"), k as u64]);
            // Drawn first so the offset direction is shared across kappa values.
            let offset = 2.0 * spec.noniid_intensity * rng.normal();
            let samples = (0..spec.samples_per_client)
                .map(|_| {
                    let z: Vec<f64> = (0..truth.latent_dim).map(|_| rng.normal()).collect();
                    let eta = LABEL_NOISE_STD * rng.normal();
                    let label = (truth.signal(&z) + offset + eta).clamp(LABEL_MIN, LABEL_MAX);
                    let features = PerModality::from_fn(|m| truth.features(m, &z, 1.0, &mut rng));
                    Sample {
                        features,
                        mask: ModalityMask::all(),
                        label,
                    }
                })
                .collect();
            ClientDataset {
                client_id: client_id(k, spec.num_clients),
                samples,
                is_noisy: false,
            }
        })
        .collect();
    Ok(clients)
}

/// Counters from [`inject_missing`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct MissingStats {
    /// (sample, modality) pairs that were available before injection.
    pub pairs: usize,
    /// Pairs whose drop draw fired, before any restoration.
    pub dropped: usize,
    /// Samples that lost every modality and had one restored.
    pub restorations: usize,
    /// Histogram of pre-restoration drop patterns; bit `m.index()` of the
    /// slot index is set when modality `m` was dropped.
    pub patterns: [usize; 8],
}

/// Drops each available (sample, modality) pair independently with
/// probability `rho`. A sample that would lose every modality gets one
/// uniformly chosen modality (among those it had) restored.
///
/// Exactly four uniforms are drawn per sample regardless of `rho`, so masks at
/// a lower ratio are subsets of the drops at a higher ratio under one stream.
pub fn inject_missing(
    dataset: &ClientDataset,
    rho: f64,
    rng: &mut Rng,
) -> Result<(ClientDataset, MissingStats)> {
    if !(0.0..1.0).contains(&rho) {
        return Err(Error::Config(format!("missing ratio {rho} outside [0, 1)")));
    }
    let mut stats = MissingStats::default();
    let mut out = dataset.clone();
    for sample in &mut out.samples {
        let draws = [rng.uniform(), rng.uniform(), rng.uniform()];
        let restore_draw = rng.uniform();
        let before: Vec<Modality> = sample.mask.available().collect();
        let mut mask = sample.mask;
        let mut pattern = 0usize;
        for &m in &before {
            stats.pairs += 1;
            if draws[m.index()] < rho {
                stats.dropped += 1;
                pattern |= 1 << m.index();
                mask.set(m, false);
            }
        }
        stats.patterns[pattern] += 1;
        if mask.is_empty() && !before.is_empty() {
            let pick = ((restore_draw * before.len() as f64) as usize).min(before.len() - 1);
            mask.set(before[pick], true);
            stats.restorations += 1;
        }
        for m in Modality::ALL {
            if !mask.is_available(m) {
                sample.features.remove(m);
            }
        }
        sample.mask = mask;
    }
    Ok((out, stats))
}

/// Marks exactly `round(ratio * K)` clients noisy, chosen uniformly without
/// replacement. A fixed stream yields nested selections as `ratio` grows.
pub fn mark_noisy_clients(
    clients: &[ClientDataset],
    ratio: f64,
    rng: &mut Rng,
) -> Result<Vec<ClientDataset>> {
    if !(0.0..=1.0).contains(&ratio) {
        return Err(Error::Config(format!("noisy ratio {ratio} outside [0, 1]")));
    }
    let n_noisy = (ratio * clients.len() as f64).round() as usize;
    let mut order: Vec<usize> = (0..clients.len()).collect();
    rng.shuffle(&mut order);
    let mut out = clients.to_vec();
    for c in out.iter_mut() {
        c.is_noisy = false;
    }
    for &i in &order[..n_noisy] {
        out[i].is_noisy = true;
    }
    Ok(out)
}

/// Generation, missing-modality injection and noisy marking, each from its own
/// derived stream.
pub fn build_federation(spec: &FederationSpec) -> Result<Vec<ClientDataset>> {
    let clean = generate_federation(spec)?;
    apply_heterogeneity(clean, spec.missing_ratio, spec.noisy_ratio, spec.seed)
}

/// Injects missing modalities and marks noisy clients on an existing
/// federation.
pub fn apply_heterogeneity(
    clients: Vec<ClientDataset>,
    missing_ratio: f64,
    noisy_ratio: f64,
    seed: u64,
) -> Result<Vec<ClientDataset>> {
    let root = Rng::new(seed);
    let masked = clients
        .iter()
        .enumerate()
        .map(|(k, c)| {
            let mut rng = root.derive(&[tag("missing"), k as u64]);
            inject_missing(c, missing_ratio, &mut rng).map(|(d, _)| d)
        })
        .collect::<Result<Vec<_>>>()?;
    mark_noisy_clients(&masked, noisy_ratio, &mut root.derive(&[tag("noisy")]))
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FeatureRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    v: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    a: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    t: Option<Vec<f64>>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MaskRecord {
    v: u8,
    a: u8,
    t: u8,
}

/// One JSONL line.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SampleRecord {
    client_id: String,
    features: FeatureRecord,
    mask: MaskRecord,
    label: f64,
}

impl SampleRecord {
    fn from_sample(client_id: &str, s: &Sample) -> Self {
        let bit = |m| u8::from(s.mask.is_available(m));
        SampleRecord {
            client_id: client_id.to_string(),
            features: FeatureRecord {
                v: s.features.get(Modality::Visual).cloned(),
                a: s.features.get(Modality::Audio).cloned(),
                t: s.features.get(Modality::Text).cloned(),
            },
            mask: MaskRecord {
                v: bit(Modality::Visual),
                a: bit(Modality::Audio),
                t: bit(Modality::Text),
            },
            label: s.label,
        }
    }

    fn into_sample(self) -> Result<(String, Sample)> {
        let mut mask = ModalityMask::none();
        for (m, bit) in [
            (Modality::Visual, self.mask.v),
            (Modality::Audio, self.mask.a),
            (Modality::Text, self.mask.t),
        ] {
            match bit {
                0 => {}
                1 => mask.set(m, true),
                other => {
                    return Err(Error::Validation(format!(
                        "mask `{m}` must be 0 or 1, got {other}"
                    )))
                }
            }
        }
        let mut features = PerModality::new();
        for (m, f) in [
            (Modality::Visual, self.features.v),
            (Modality::Audio, self.features.a),
            (Modality::Text, self.features.t),
        ] {
            if let Some(f) = f {
                features.insert(m, f);
            }
        }
        let sample = Sample {
            features,
            mask,
            label: self.label,
        };
        sample.validate()?;
        Ok((self.client_id, sample))
    }
}

/// Writes one JSON object per sample, clients in order.
pub fn write_jsonl(path: &Path, clients: &[ClientDataset]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for c in clients {
        for s in &c.samples {
            let line = serde_json::to_string(&SampleRecord::from_sample(&c.client_id, s))?;
            writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Parses a JSONL federation. Clients appear in order of first occurrence and
/// keep their samples in file order. Blank lines are ignored.
pub fn load_jsonl(path: &Path) -> Result<Vec<ClientDataset>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut clients: Vec<ClientDataset> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut dims: [Option<usize>; 3] = [None; 3];
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: SampleRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: lineno,
            message: e.to_string(),
        })?;
        let (id, sample) = record
            .into_sample()
            .map_err(|e| Error::Validation(format!("line {lineno}: {e}")))?;
        for (m, x) in sample.features.iter() {
            match dims[m.index()] {
                None => dims[m.index()] = Some(x.len()),
                Some(d) if d != x.len() => {
                    return Err(Error::Validation(format!(
                        "line {lineno}: `{m}` features have length {} but earlier lines use {d}",
                        x.len()
                    )))
                }
                Some(_) => {}
            }
        }
        let slot = *index.entry(id.clone()).or_insert_with(|| {
            clients.push(ClientDataset {
                client_id: id,
                samples: Vec::new(),
                is_noisy: false,
            });
            clients.len() - 1
        });
        clients[slot].samples.push(sample);
    }
    if clients.is_empty() {
        return Err(Error::DegenerateInput(format!(
            "empty federation: {} contains no samples",
            path.display()
        )));
    }
    Ok(clients)
}

/// Per-modality feature dimensions observed in a federation.
pub fn feature_dims(clients: &[ClientDataset]) -> PerModality<usize> {
    let mut dims = PerModality::new();
    for s in clients.iter().flat_map(|c| &c.samples) {
        for (m, x) in s.features.iter() {
            if !dims.contains(m) {
                dims.insert(m, x.len());
            }
        }
    }
    dims
}

/// Mean label per client.
pub fn client_label_means(clients: &[ClientDataset]) -> Vec<f64> {
    clients
        .iter()
        .map(|c| c.samples.iter().map(|s| s.label).sum::<f64>() / c.samples.len() as f64)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> FederationSpec {
        FederationSpec {
            num_clients: 3,
            samples_per_client: 50,
            ..FederationSpec::default()
        }
    }

    #[test]
    fn labels_stay_in_range() {
        let s = FederationSpec {
            noniid_intensity: 1.0,
            ..spec()
        };
        for c in generate_federation(&s).unwrap() {
            assert!(c
                .samples
                .iter()
                .all(|x| (LABEL_MIN..=LABEL_MAX).contains(&x.label)));
            c.validate().unwrap();
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = build_federation(&spec()).unwrap();
        let b = build_federation(&spec()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn spec_validation() {
        let bad = FederationSpec {
            num_clients: 1,
            ..spec()
        };
        assert!(matches!(generate_federation(&bad), Err(Error::Config(_))));
        let bad = FederationSpec {
            missing_ratio: 1.0,
            ..spec()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn splits_are_70_10_20() {
        let c = &generate_federation(&spec()).unwrap()[0];
        let s = c.splits();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (35, 5, 10));
        let five = ClientDataset {
            samples: c.samples[..5].to_vec(),
            ..c.clone()
        };
        let s = five.splits();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (3, 0, 2));
    }

    #[test]
    fn zero_missing_ratio_keeps_masks() {
        let c = &generate_federation(&spec()).unwrap()[0];
        let (out, stats) = inject_missing(c, 0.0, &mut Rng::new(1)).unwrap();
        assert!(out.samples.iter().all(|s| s.mask == ModalityMask::all()));
        assert_eq!(stats.dropped, 0);
    }

    #[test]
    fn injection_keeps_one_modality_and_features_match_mask() {
        let c = &generate_federation(&spec()).unwrap()[0];
        let (out, _) = inject_missing(c, 0.95, &mut Rng::new(2)).unwrap();
        for s in &out.samples {
            assert!(s.mask.count() >= 1);
            s.validate().unwrap();
        }
    }

    #[test]
    fn lower_ratio_masks_are_supersets() {
        let c = &generate_federation(&spec()).unwrap()[0];
        let (low, _) = inject_missing(c, 0.2, &mut Rng::new(3)).unwrap();
        let (high, _) = inject_missing(c, 0.8, &mut Rng::new(3)).unwrap();
        for (l, h) in low.samples.iter().zip(&high.samples) {
            for m in Modality::ALL {
                // A modality dropped at 0.2 can reappear at 0.8 only through
                // restoration, which leaves a single modality.
                if h.mask.is_available(m) && !l.mask.is_available(m) {
                    assert_eq!(
                        h.mask.count(),
                        1,
                        "modality {m} kept at 0.8 but dropped at 0.2"
                    );
                }
            }
        }
    }

    #[test]
    fn noisy_marking() {
        let clients = generate_federation(&FederationSpec {
            num_clients: 10,
            samples_per_client: 2,
            ..FederationSpec::default()
        })
        .unwrap();
        let none = mark_noisy_clients(&clients, 0.0, &mut Rng::new(4)).unwrap();
        assert_eq!(none.iter().filter(|c| c.is_noisy).count(), 0);
        let six = mark_noisy_clients(&clients, 0.6, &mut Rng::new(4)).unwrap();
        assert_eq!(six.iter().filter(|c| c.is_noisy).count(), 6);
        let again = mark_noisy_clients(&clients, 0.6, &mut Rng::new(4)).unwrap();
        assert_eq!(six, again);
        let two = mark_noisy_clients(&clients, 0.2, &mut Rng::new(4)).unwrap();
        for (a, b) in two.iter().zip(&six) {
            assert!(!a.is_noisy || b.is_noisy);
        }
    }

    #[test]
    fn client_ids_sort_numerically() {
        assert_eq!(client_id(3, 10), "client-03");
        assert_eq!(client_id(7, 120), "client-007");
        assert!(client_id(9, 10) < client_id(10, 11));
    }
}
