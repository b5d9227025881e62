//! Multi-layer perceptron with inverted dropout and a hand-written backward
//! pass.
//!
//! Dropout is applied after every ReLU activation when running in
//! [`Mode::Train`]; kept units are scaled by `1 / (1 - rate)` so the eval-mode
//! output equals the expectation of the train-mode output over masks.
//! Identity (output) layers never get dropout.

use crate::error::{ensure_finite, Error, Result};
use crate::nn::layer::{axpy, Activation, DenseLayer};
use crate::nn::params::{NamedTensor, ParamSet};
use crate::rng::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    layers: Vec<DenseLayer>,
    dropout_rate: f64,
}

#[derive(Clone, Debug)]
struct LayerRecord {
    input: Vec<f64>,
    pre: Vec<f64>,
    /// Per-unit scale applied after activation: `0` or `1 / (1 - rate)`.
    mask: Option<Vec<f64>>,
}

/// Activation record of one forward pass, consumed by [`Mlp::backward`].
#[derive(Clone, Debug)]
pub struct Tape {
    records: Vec<LayerRecord>,
}

impl Tape {
    /// Dropout masks per layer (`None` where no dropout was applied).
    pub fn masks(&self) -> impl Iterator<Item = Option<&[f64]>> {
        self.records.iter().map(|r| r.mask.as_deref())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerGrads {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Gradients for every parameter of an [`Mlp`], laid out like the network.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpGrads {
    pub layers: Vec<LayerGrads>,
}

impl MlpGrads {
    pub fn zeros_like(mlp: &Mlp) -> Self {
        MlpGrads {
            layers: mlp
                .layers
                .iter()
                .map(|l| LayerGrads {
                    weights: vec![0.0; l.weights.len()],
                    bias: vec![0.0; l.bias.len()],
                })
                .collect(),
        }
    }

    pub fn scale(&mut self, s: f64) {
        for l in &mut self.layers {
            l.weights.iter_mut().for_each(|g| *g *= s);
            l.bias.iter_mut().for_each(|g| *g *= s);
        }
    }

    pub fn tensors(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weights.as_slice(), l.bias.as_slice()])
            .collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weights.as_mut_slice(), l.bias.as_mut_slice()])
            .collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|t| t.iter())
            .fold(0.0f64, |m, g| m.max(g.abs()))
    }
}

impl Mlp {
    pub fn new(layers: Vec<DenseLayer>, dropout_rate: f64) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Config("an MLP needs at least one layer".into()));
        }
        if !(0.0..1.0).contains(&dropout_rate) {
            return Err(Error::Config(format!(
                "dropout rate {dropout_rate} outside [0, 1)"
            )));
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(Error::Shape(format!(
                    "layer {i} outputs {} but layer {} expects {}",
                    pair[0].out_dim(),
                    i + 1,
                    pair[1].in_dim()
                )));
            }
        }
        Ok(Self {
            layers,
            dropout_rate,
        })
    }

    /// Builds `dims[0] -> dims[1] -> ... -> dims[n]` with `hidden` activations on
    /// every layer except the last, which uses `output`.
    pub fn build(
        dims: &[usize],
        hidden: Activation,
        output: Activation,
        dropout_rate: f64,
        rng: &mut Rng,
    ) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::Config(format!(
                "need at least two dims, got {dims:?}"
            )));
        }
        let n = dims.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let act = if i + 1 == n { output } else { hidden };
                DenseLayer::glorot(dims[i], dims[i + 1], act, rng)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(layers, dropout_rate)
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [DenseLayer] {
        &mut self.layers
    }

    pub fn dropout_rate(&self) -> f64 {
        self.dropout_rate
    }

    pub fn set_dropout_rate(&mut self, rate: f64) -> Result<()> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Config(format!("dropout rate {rate} outside [0, 1)")));
        }
        self.dropout_rate = rate;
        Ok(())
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    #[inline]
    fn dropout_active(&self, layer: &DenseLayer, mode: Mode) -> bool {
        mode == Mode::Train && self.dropout_rate > 0.0 && layer.activation() == Activation::Relu
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.in_dim() {
            return Err(Error::Shape(format!(
                "input has length {} but the network expects {}",
                x.len(),
                self.in_dim()
            )));
        }
        ensure_finite(x, "network input")
    }

    /// Runs layers `start..` on `input`, which must already be the output of
    /// layer `start - 1` (or the network input when `start == 0`).
    fn run_from(
        &self,
        start: usize,
        input: Vec<f64>,
        mode: Mode,
        rng: &mut Rng,
        mut records: Option<&mut Vec<LayerRecord>>,
    ) -> Vec<f64> {
        let keep_scale = 1.0 / (1.0 - self.dropout_rate);
        let mut cur = input;
        let mut pre = Vec::new();
        for layer in &self.layers[start..] {
            layer.affine(&cur, &mut pre);
            let act = layer.activation();
            let mut out: Vec<f64> = pre.iter().map(|&z| act.apply(z)).collect();
            let mask = if self.dropout_active(layer, mode) {
                let want_mask = records.is_some();
                let mut mask = Vec::with_capacity(if want_mask { out.len() } else { 0 });
                for o in out.iter_mut() {
                    let s = if rng.uniform() < self.dropout_rate {
                        0.0
                    } else {
                        keep_scale
                    };
                    *o *= s;
                    if want_mask {
                        mask.push(s);
                    }
                }
                want_mask.then_some(mask)
            } else {
                None
            };
            match records.as_deref_mut() {
                Some(recs) => recs.push(LayerRecord {
                    input: std::mem::replace(&mut cur, out),
                    pre: pre.clone(),
                    mask,
                }),
                None => cur = out,
            }
        }
        cur
    }

    /// Forward pass recording everything needed for [`Mlp::backward`].
    /// `rng` is only consumed in train mode.
    pub fn forward(&self, x: &[f64], mode: Mode, rng: &mut Rng) -> Result<(Vec<f64>, Tape)> {
        self.check_input(x)?;
        let mut records = Vec::with_capacity(self.layers.len());
        let out = self.run_from(0, x.to_vec(), mode, rng, Some(&mut records));
        Ok((out, Tape { records }))
    }

    /// Deterministic eval-mode output.
    pub fn predict(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        // Eval mode never touches the stream.
        let mut unused = Rng::new(0);
        Ok(self.run_from(0, x.to_vec(), Mode::Eval, &mut unused, None))
    }

    /// One stochastic (train-mode) pass without recording a tape.
    pub fn sample(&self, x: &[f64], rng: &mut Rng) -> Result<Vec<f64>> {
        self.check_input(x)?;
        Ok(self.run_from(0, x.to_vec(), Mode::Train, rng, None))
    }

    /// Post-activation output of the first layer before any dropout. Lets
    /// repeated stochastic passes over the same input skip recomputing it.
    pub fn first_activation(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let layer = &self.layers[0];
        let mut pre = Vec::new();
        layer.affine(x, &mut pre);
        let act = layer.activation();
        Ok(pre.into_iter().map(|z| act.apply(z)).collect())
    }

    /// Completes a pass started by [`Mlp::first_activation`]: applies the first
    /// layer's dropout (train mode) and runs the remaining layers.
    pub fn sample_from_first(&self, first: &[f64], mode: Mode, rng: &mut Rng) -> Vec<f64> {
        let mut h = first.to_vec();
        if self.dropout_active(&self.layers[0], mode) {
            let keep_scale = 1.0 / (1.0 - self.dropout_rate);
            for v in h.iter_mut() {
                *v *= if rng.uniform() < self.dropout_rate {
                    0.0
                } else {
                    keep_scale
                };
            }
        }
        self.run_from(1, h, mode, rng, None)
    }

    fn check_tape(&self, tape: &Tape) -> Result<()> {
        let matches = tape.records.len() == self.layers.len()
            && tape.records.iter().zip(&self.layers).all(|(r, l)| {
                r.input.len() == l.in_dim()
                    && r.pre.len() == l.out_dim()
                    && r.mask.as_ref().is_none_or(|m| m.len() == l.out_dim())
            });
        if matches {
            Ok(())
        } else {
            Err(Error::State(
                "tape was not produced by a forward pass of this network".into(),
            ))
        }
    }

    /// Adds the gradients of the loss into `grads` and returns the gradient
    /// with respect to the network input.
    pub fn backward_accumulate(
        &self,
        tape: &Tape,
        d_out: &[f64],
        grads: &mut MlpGrads,
    ) -> Result<Vec<f64>> {
        self.check_tape(tape)?;
        if d_out.len() != self.out_dim() {
            return Err(Error::Shape(format!(
                "output gradient has length {} but the network outputs {}",
                d_out.len(),
                self.out_dim()
            )));
        }
        if grads.layers.len() != self.layers.len() {
            return Err(Error::Shape(
                "gradient buffer does not match network".into(),
            ));
        }
        let mut upstream = d_out.to_vec();
        for ((layer, rec), g) in self
            .layers
            .iter()
            .zip(&tape.records)
            .zip(grads.layers.iter_mut())
            .rev()
        {
            let act = layer.activation();
            let d_pre: Vec<f64> = match &rec.mask {
                Some(mask) => upstream
                    .iter()
                    .zip(mask)
                    .zip(&rec.pre)
                    .map(|((u, m), &z)| u * m * act.derivative(z))
                    .collect(),
                None => upstream
                    .iter()
                    .zip(&rec.pre)
                    .map(|(u, &z)| u * act.derivative(z))
                    .collect(),
            };
            let in_dim = layer.in_dim();
            let mut d_in = vec![0.0; in_dim];
            for (o, &d) in d_pre.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                let row = o * in_dim..(o + 1) * in_dim;
                axpy(d, &rec.input, &mut g.weights[row.clone()]);
                axpy(d, &layer.weights[row], &mut d_in);
                g.bias[o] += d;
            }
            upstream = d_in;
        }
        Ok(upstream)
    }

    /// Gradients of the loss for every parameter plus the input gradient.
    pub fn backward(&self, tape: &Tape, d_out: &[f64]) -> Result<(MlpGrads, Vec<f64>)> {
        let mut grads = MlpGrads::zeros_like(self);
        let d_in = self.backward_accumulate(tape, d_out, &mut grads)?;
        Ok((grads, d_in))
    }

    /// Parameter tensors in `[w0, b0, w1, b1, ...]` order.
    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weights.as_mut_slice(), l.bias.as_mut_slice()])
            .collect()
    }

    pub fn tensors(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weights.as_slice(), l.bias.as_slice()])
            .collect()
    }

    /// Named tensors `"{prefix}.{i}.weight"` (shape `[out, in]`) and
    /// `"{prefix}.{i}.bias"` (shape `[out]`).
    pub fn export(&self, prefix: &str) -> Vec<NamedTensor> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(i, l)| {
                [
                    NamedTensor::new(
                        format!("{prefix}.{i}.weight"),
                        vec![l.out_dim(), l.in_dim()],
                        l.weights.clone(),
                    ),
                    NamedTensor::new(
                        format!("{prefix}.{i}.bias"),
                        vec![l.out_dim()],
                        l.bias.clone(),
                    ),
                ]
            })
            .collect()
    }

    /// Overwrites parameters from `params`; every tensor under `prefix` must be
    /// present with the exact shape.
    pub fn import(&mut self, prefix: &str, params: &ParamSet) -> Result<()> {
        for (i, l) in self.layers.iter_mut().enumerate() {
            let w = params.require(&format!("{prefix}.{i}.weight"), &[l.out_dim(), l.in_dim()])?;
            let b = params.require(&format!("{prefix}.{i}.bias"), &[l.out_dim()])?;
            l.weights.copy_from_slice(&w.values);
            l.bias.copy_from_slice(&b.values);
        }
        Ok(())
    }
}
