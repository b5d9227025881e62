//! The client model: one encoder per modality, a shared representation head
//! and a client-specific scalar prediction head, wired through fusion.
//!
//! `x^m -> encoder[m] -> h^m`, `h = sum alpha[m] h^m`,
//! `y = prediction_head(shared_head(h))`.
//!
//! Fusion weights are inputs to the forward pass and are treated as
//! constants by the backward pass.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::{fuse, FusionWeights};
use crate::modality::{Modality, PerModality};
use crate::nn::{Activation, Mlp, MlpGrads, Mode, NamedTensor, ParamSet, Tape};
use crate::rng::Rng;

pub const SHARED_PREFIX: &str = "shared";
pub const ENCODER_PREFIX: &str = "encoder";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    /// Input feature dimension per modality, in `v, a, t` order.
    pub feature_dims: [usize; 3],
    /// Encoder output / fusion dimension.
    pub hidden_dim: usize,
    /// Shared head output dimension.
    pub shared_dim: usize,
    pub dropout: f64,
}

#[derive(Clone, Debug)]
pub struct ModelParams {
    pub encoders: PerModality<Mlp>,
    pub shared_head: Mlp,
    pub prediction_head: Mlp,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelGrads {
    pub encoders: PerModality<MlpGrads>,
    pub shared_head: MlpGrads,
    pub prediction_head: MlpGrads,
}

impl ModelGrads {
    pub fn zeros_like(model: &ModelParams) -> Self {
        ModelGrads {
            encoders: model.encoders.map(|_, e| MlpGrads::zeros_like(e)),
            shared_head: MlpGrads::zeros_like(&model.shared_head),
            prediction_head: MlpGrads::zeros_like(&model.prediction_head),
        }
    }

    pub fn scale(&mut self, s: f64) {
        for (_, g) in self.encoders.iter_mut() {
            g.scale(s);
        }
        self.shared_head.scale(s);
        self.prediction_head.scale(s);
    }

    /// Same order as [`ModelParams::tensors_mut`].
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        for (_, g) in self.encoders.iter() {
            out.extend(g.tensors());
        }
        out.extend(self.shared_head.tensors());
        out.extend(self.prediction_head.tensors());
        out
    }

    /// Gradients of the exchanged tensors, in [`ModelParams::export_shared`] order.
    pub fn shared_tensors_mut(&mut self, share_encoders: bool) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = self.shared_head.tensors_mut();
        if share_encoders {
            for (_, g) in self.encoders.iter_mut() {
                out.extend(g.tensors_mut());
            }
        }
        out
    }
}

/// Everything recorded by [`ModelParams::forward`].
#[derive(Clone, Debug)]
pub struct PipelineTape {
    encoders: PerModality<Tape>,
    alpha: FusionWeights,
    shared: Tape,
    head: Tape,
}

impl PipelineTape {
    pub fn alpha(&self) -> &FusionWeights {
        &self.alpha
    }
}

impl ModelParams {
    /// Glorot-initialized model: encoders `d_m -> hidden` (ReLU), shared head
    /// `hidden -> shared` (ReLU), prediction head `shared -> 1` (identity).
    pub fn init(arch: &Architecture, rng: &mut Rng) -> Result<Self> {
        let mut encoders = PerModality::new();
        for m in Modality::ALL {
            let enc = Mlp::build(
                &[arch.feature_dims[m.index()], arch.hidden_dim],
                Activation::Relu,
                Activation::Relu,
                arch.dropout,
                rng,
            )?;
            encoders.insert(m, enc);
        }
        let shared_head = Self::init_shared_head(arch, rng)?;
        let prediction_head = Mlp::build(
            &[arch.shared_dim, 1],
            Activation::Relu,
            Activation::Identity,
            arch.dropout,
            rng,
        )?;
        Self::from_parts(encoders, shared_head, prediction_head)
    }

    pub fn init_shared_head(arch: &Architecture, rng: &mut Rng) -> Result<Mlp> {
        Mlp::build(
            &[arch.hidden_dim, arch.shared_dim],
            Activation::Relu,
            Activation::Relu,
            arch.dropout,
            rng,
        )
    }

    pub fn from_parts(
        encoders: PerModality<Mlp>,
        shared_head: Mlp,
        prediction_head: Mlp,
    ) -> Result<Self> {
        if encoders.len() != Modality::ALL.len() {
            return Err(Error::Config("every modality needs an encoder".into()));
        }
        for (m, e) in encoders.iter() {
            if e.out_dim() != shared_head.in_dim() {
                return Err(Error::Shape(format!(
                    "encoder `{m}` outputs {} but the shared head expects {}",
                    e.out_dim(),
                    shared_head.in_dim()
                )));
            }
        }
        if shared_head.out_dim() != prediction_head.in_dim() {
            return Err(Error::Shape(format!(
                "shared head outputs {} but the prediction head expects {}",
                shared_head.out_dim(),
                prediction_head.in_dim()
            )));
        }
        if prediction_head.out_dim() != 1 {
            return Err(Error::Shape("prediction head must output a scalar".into()));
        }
        Ok(Self {
            encoders,
            shared_head,
            prediction_head,
        })
    }

    pub fn encoder(&self, m: Modality) -> &Mlp {
        self.encoders
            .get(m)
            .expect("encoders exist for every modality")
    }

    pub fn fusion_dim(&self) -> usize {
        self.shared_head.in_dim()
    }

    /// Full forward pass. Only modalities with non-zero fusion weight are
    /// encoded, so `features` may omit the others.
    pub fn forward(
        &self,
        features: &PerModality<Vec<f64>>,
        alpha: &FusionWeights,
        mode: Mode,
        rng: &mut Rng,
    ) -> Result<(f64, PipelineTape)> {
        let mut reps = PerModality::new();
        let mut tapes = PerModality::new();
        for (m, _) in alpha.active() {
            let x = features
                .get(m)
                .ok_or_else(|| Error::State(format!("no features for weighted modality `{m}`")))?;
            let (h, tape) = self.encoder(m).forward(x, mode, rng)?;
            reps.insert(m, h);
            tapes.insert(m, tape);
        }
        let fused = fuse(&reps, alpha)?;
        let (s, shared) = self.shared_head.forward(&fused, mode, rng)?;
        let (y, head) = self.prediction_head.forward(&s, mode, rng)?;
        Ok((
            y[0],
            PipelineTape {
                encoders: tapes,
                alpha: *alpha,
                shared,
                head,
            },
        ))
    }

    /// Deterministic eval-mode prediction.
    pub fn predict(&self, features: &PerModality<Vec<f64>>, alpha: &FusionWeights) -> Result<f64> {
        let mut reps = PerModality::new();
        for (m, _) in alpha.active() {
            let x = features
                .get(m)
                .ok_or_else(|| Error::State(format!("no features for weighted modality `{m}`")))?;
            reps.insert(m, self.encoder(m).predict(x)?);
        }
        let fused = fuse(&reps, alpha)?;
        let s = self.shared_head.predict(&fused)?;
        Ok(self.prediction_head.predict(&s)?[0])
    }

    /// Adds d(loss)/d(params) into `grads` given d(loss)/d(prediction).
    pub fn backward_accumulate(
        &self,
        tape: &PipelineTape,
        d_pred: f64,
        grads: &mut ModelGrads,
    ) -> Result<()> {
        let d_s = self.prediction_head.backward_accumulate(
            &tape.head,
            &[d_pred],
            &mut grads.prediction_head,
        )?;
        let d_h =
            self.shared_head
                .backward_accumulate(&tape.shared, &d_s, &mut grads.shared_head)?;
        for (m, enc_tape) in tape.encoders.iter() {
            let a = tape.alpha.get(m);
            let d_hm: Vec<f64> = d_h.iter().map(|g| a * g).collect();
            let g = grads
                .encoders
                .get_mut(m)
                .ok_or_else(|| Error::State(format!("no gradient buffer for `{m}`")))?;
            self.encoder(m).backward_accumulate(enc_tape, &d_hm, g)?;
        }
        Ok(())
    }

    pub fn backward(&self, tape: &PipelineTape, d_pred: f64) -> Result<ModelGrads> {
        let mut grads = ModelGrads::zeros_like(self);
        self.backward_accumulate(tape, d_pred, &mut grads)?;
        Ok(grads)
    }

    /// Deterministic first-layer activations of each weighted modality's
    /// encoder, reused across repeated stochastic passes.
    pub fn encoder_cache(
        &self,
        features: &PerModality<Vec<f64>>,
        modalities: impl Iterator<Item = Modality>,
    ) -> Result<PerModality<Vec<f64>>> {
        let mut cache = PerModality::new();
        for m in modalities {
            let x = features
                .get(m)
                .ok_or_else(|| Error::State(format!("no features for modality `{m}`")))?;
            cache.insert(m, self.encoder(m).first_activation(x)?);
        }
        Ok(cache)
    }

    /// One train-mode (dropout) pass from cached encoder activations.
    pub fn stochastic_pass(
        &self,
        cache: &PerModality<Vec<f64>>,
        alpha: &FusionWeights,
        rng: &mut Rng,
    ) -> Result<f64> {
        let mut reps = PerModality::new();
        for (m, _) in alpha.active() {
            let first = cache
                .get(m)
                .ok_or_else(|| Error::State(format!("no cached activation for `{m}`")))?;
            reps.insert(
                m,
                self.encoder(m).sample_from_first(first, Mode::Train, rng),
            );
        }
        let fused = fuse(&reps, alpha)?;
        let s = self.shared_head.sample(&fused, rng)?;
        Ok(self.prediction_head.sample(&s, rng)?[0])
    }

    /// One train-mode pass routing only modality `m` (its representation is
    /// fed to the shared head on its own).
    pub fn probe_pass(&self, m: Modality, first: &[f64], rng: &mut Rng) -> Result<f64> {
        let h = self.encoder(m).sample_from_first(first, Mode::Train, rng);
        let s = self.shared_head.sample(&h, rng)?;
        Ok(self.prediction_head.sample(&s, rng)?[0])
    }

    /// All trainable tensors: encoders (`v, a, t`), shared head, prediction head.
    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for (_, e) in self.encoders.iter_mut() {
            out.extend(e.tensors_mut());
        }
        out.extend(self.shared_head.tensors_mut());
        out.extend(self.prediction_head.tensors_mut());
        out
    }

    pub fn tensor_sizes(&self) -> Vec<usize> {
        let mut out = Vec::new();
        for (_, e) in self.encoders.iter() {
            out.extend(e.tensors().iter().map(|t| t.len()));
        }
        out.extend(self.shared_head.tensors().iter().map(|t| t.len()));
        out.extend(self.prediction_head.tensors().iter().map(|t| t.len()));
        out
    }

    /// The parameters exchanged with the server: the shared head, plus the
    /// encoders when `share_encoders` is set.
    pub fn export_shared(&self, share_encoders: bool) -> ParamSet {
        let mut tensors: Vec<NamedTensor> = self.shared_head.export(SHARED_PREFIX);
        if share_encoders {
            for (m, e) in self.encoders.iter() {
                tensors.extend(e.export(&format!("{ENCODER_PREFIX}.{m}")));
            }
        }
        ParamSet::new(tensors)
    }

    /// Sets the bias of the prediction head's output unit.
    pub fn set_output_bias(&mut self, value: f64) {
        if let Some(last) = self.prediction_head.layers_mut().last_mut() {
            last.bias_mut()[0] = value;
        }
    }

    /// Exchanged tensors in [`ModelParams::export_shared`] order.
    pub fn shared_tensors(&self, share_encoders: bool) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = self.shared_head.tensors();
        if share_encoders {
            for (_, e) in self.encoders.iter() {
                out.extend(e.tensors());
            }
        }
        out
    }

    pub fn import_shared(&mut self, params: &ParamSet, share_encoders: bool) -> Result<()> {
        self.shared_head.import(SHARED_PREFIX, params)?;
        if share_encoders {
            for (m, e) in self.encoders.iter_mut() {
                e.import(&format!("{ENCODER_PREFIX}.{m}"), params)?;
            }
        }
        Ok(())
    }

    /// Full checkpoint of every tensor.
    pub fn export_all(&self) -> ParamSet {
        let mut tensors = Vec::new();
        for (m, e) in self.encoders.iter() {
            tensors.extend(e.export(&format!("{ENCODER_PREFIX}.{m}")));
        }
        tensors.extend(self.shared_head.export(SHARED_PREFIX));
        tensors.extend(self.prediction_head.export("head"));
        ParamSet::new(tensors)
    }
}
