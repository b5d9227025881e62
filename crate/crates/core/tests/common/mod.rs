//! Shared check routines for the integration test targets.
#![allow(dead_code)]

use feduaf_core::fedsim::fedprox_penalty;
use feduaf_core::fusion::{fusion_weights, uniform_fusion_weights};
use feduaf_core::model::{Architecture, ModelParams};
use feduaf_core::nn::{mse_loss, Activation, Mlp, Mode};
use feduaf_core::uncertainty::{entropy_uncertainty, variance_uncertainty};
use feduaf_core::{ModalityMask, PerModality, Rng};

const H: f64 = 1e-5;

fn close(analytic: f64, numeric: f64) -> bool {
    (analytic - numeric).abs() <= 1e-4 * analytic.abs().max(numeric.abs()) + 1e-7
}

fn random_mlp(rng: &mut Rng) -> Mlp {
    let depth = 1 + rng.below(3);
    let dims: Vec<usize> = (0..=depth).map(|_| 1 + rng.below(8)).collect();
    let out_act = if rng.uniform() < 0.5 {
        Activation::Identity
    } else {
        Activation::Relu
    };
    let mut mlp = Mlp::build(&dims, Activation::Relu, out_act, 0.0, rng).unwrap();
    for t in mlp.tensors_mut() {
        for v in t.iter_mut() {
            *v = rng.uniform_range(-1.0, 1.0);
        }
    }
    mlp
}

/// `sum c_i y_i` for fixed random `c`.
fn weighted_sum(y: &[f64], c: &[f64]) -> f64 {
    y.iter().zip(c).map(|(a, b)| a * b).sum()
}

/// Parameter and input gradients of random small MLPs.
pub fn mlp_gradcheck(cases: u64) -> Result<(), String> {
    for case in 0..cases {
        let mut rng = Rng::new(1000 + case);
        let mut mlp = random_mlp(&mut rng);
        let x: Vec<f64> = (0..mlp.in_dim())
            .map(|_| rng.uniform_range(-2.0, 2.0))
            .collect();
        let c: Vec<f64> = (0..mlp.out_dim())
            .map(|_| rng.uniform_range(-1.0, 1.0))
            .collect();

        let (_, tape) = mlp.forward(&x, Mode::Train, &mut rng).unwrap();
        let (grads, d_x) = mlp.backward(&tape, &c).unwrap();
        let analytic: Vec<Vec<f64>> = grads.tensors().iter().map(|t| t.to_vec()).collect();

        for (ti, g) in analytic.iter().enumerate() {
            for j in 0..g.len() {
                let orig = mlp.tensors_mut()[ti][j];
                mlp.tensors_mut()[ti][j] = orig + H;
                let up = weighted_sum(&mlp.predict(&x).unwrap(), &c);
                mlp.tensors_mut()[ti][j] = orig - H;
                let down = weighted_sum(&mlp.predict(&x).unwrap(), &c);
                mlp.tensors_mut()[ti][j] = orig;
                let numeric = (up - down) / (2.0 * H);
                if !close(g[j], numeric) {
                    return Err(format!(
                        "case {case} tensor {ti}[{j}]: {} vs {numeric}",
                        g[j]
                    ));
                }
            }
        }
        for j in 0..x.len() {
            let mut xp = x.clone();
            xp[j] += H;
            let mut xm = x.clone();
            xm[j] -= H;
            let numeric = (weighted_sum(&mlp.predict(&xp).unwrap(), &c)
                - weighted_sum(&mlp.predict(&xm).unwrap(), &c))
                / (2.0 * H);
            if !close(d_x[j], numeric) {
                return Err(format!("case {case} input {j}: {} vs {numeric}", d_x[j]));
            }
        }
    }
    Ok(())
}

pub fn random_pipeline(rng: &mut Rng) -> (ModelParams, PerModality<Vec<f64>>, ModalityMask, f64) {
    let arch = Architecture {
        feature_dims: [1 + rng.below(8), 1 + rng.below(8), 1 + rng.below(8)],
        hidden_dim: 1 + rng.below(8),
        shared_dim: 1 + rng.below(8),
        dropout: 0.0,
    };
    let mut model = ModelParams::init(&arch, rng).unwrap();
    for t in model.tensors_mut() {
        for v in t.iter_mut() {
            *v = rng.uniform_range(-1.0, 1.0);
        }
    }
    let bits = 1 + rng.below(7);
    let mask = ModalityMask::from_bits(bits & 1 != 0, bits & 2 != 0, bits & 4 != 0);
    let features: PerModality<Vec<f64>> = mask
        .available()
        .map(|m| {
            (
                m,
                (0..arch.feature_dims[m.index()])
                    .map(|_| rng.uniform_range(-2.0, 2.0))
                    .collect(),
            )
        })
        .collect();
    let label = rng.uniform_range(-3.0, 3.0);
    (model, features, mask, label)
}

/// Full pipeline gradients (encoders, fusion with fixed weights, heads).
pub fn pipeline_gradcheck(cases: u64) -> Result<(), String> {
    for case in 0..cases {
        let mut rng = Rng::new(5000 + case);
        let (mut model, features, mask, label) = random_pipeline(&mut rng);
        let alpha = if case % 2 == 0 {
            uniform_fusion_weights(&mask).unwrap()
        } else {
            let u: PerModality<f64> = mask
                .available()
                .map(|m| (m, rng.uniform_range(0.0, 2.0)))
                .collect();
            fusion_weights(&u, &mask).unwrap()
        };

        let (pred, tape) = model
            .forward(&features, &alpha, Mode::Train, &mut rng)
            .unwrap();
        let (_, d_pred) = mse_loss(pred, label).unwrap();
        let grads = model.backward(&tape, d_pred).unwrap();
        let analytic: Vec<Vec<f64>> = grads.tensors().iter().map(|t| t.to_vec()).collect();

        // Alpha is held fixed: it is an input of the pass, not a function of
        // the parameters being differentiated.
        let loss = |m: &ModelParams| {
            mse_loss(m.predict(&features, &alpha).unwrap(), label)
                .unwrap()
                .0
        };
        for (ti, g) in analytic.iter().enumerate() {
            for j in 0..g.len() {
                let orig = model.tensors_mut()[ti][j];
                model.tensors_mut()[ti][j] = orig + H;
                let up = loss(&model);
                model.tensors_mut()[ti][j] = orig - H;
                let down = loss(&model);
                model.tensors_mut()[ti][j] = orig;
                let numeric = (up - down) / (2.0 * H);
                if !close(g[j], numeric) {
                    return Err(format!(
                        "case {case} tensor {ti}[{j}]: {} vs {numeric}",
                        g[j]
                    ));
                }
            }
        }
    }
    Ok(())
}

/// Proximal penalty gradient.
pub fn fedprox_gradcheck(cases: u64) -> Result<(), String> {
    for case in 0..cases {
        let mut rng = Rng::new(9000 + case);
        let n = 1 + rng.below(8);
        let mut local: Vec<f64> = (0..n).map(|_| rng.uniform_range(-1.0, 1.0)).collect();
        let global: Vec<f64> = (0..n).map(|_| rng.uniform_range(-1.0, 1.0)).collect();
        let mu = rng.uniform_range(0.0, 1.0);
        let (_, grads) = fedprox_penalty(&[&local], &[&global], mu).unwrap();
        for j in 0..n {
            let orig = local[j];
            local[j] = orig + H;
            let up = fedprox_penalty(&[&local], &[&global], mu).unwrap().0;
            local[j] = orig - H;
            let down = fedprox_penalty(&[&local], &[&global], mu).unwrap().0;
            local[j] = orig;
            let numeric = (up - down) / (2.0 * H);
            if !close(grads[0][j], numeric) {
                return Err(format!("case {case}[{j}]: {} vs {numeric}", grads[0][j]));
            }
        }
    }
    Ok(())
}

/// Variance and entropy against their textbook formulas on random inputs.
pub fn formula_agreement(n: usize) -> Result<(), String> {
    let mut rng = Rng::new(99);
    for case in 0..n {
        let t = 2 + rng.below(10);
        let preds: Vec<f64> = (0..t).map(|_| rng.uniform_range(-3.0, 3.0)).collect();
        let mean = preds.iter().sum::<f64>() / t as f64;
        let direct = preds.iter().map(|p| (p - mean) * (p - mean)).sum::<f64>() / t as f64;
        let got = variance_uncertainty(&preds).unwrap();
        if (got - direct).abs() > 1e-12 {
            return Err(format!("case {case}: variance {got} vs {direct}"));
        }

        let classes = 2 + rng.below(4);
        let probs: Vec<Vec<f64>> = (0..t)
            .map(|_| {
                let raw: Vec<f64> = (0..classes).map(|_| rng.uniform_range(0.01, 1.0)).collect();
                let s: f64 = raw.iter().sum();
                raw.iter().map(|r| r / s).collect()
            })
            .collect();
        let avg: Vec<f64> = (0..classes)
            .map(|c| probs.iter().map(|p| p[c]).sum::<f64>() / t as f64)
            .collect();
        let direct: f64 = -avg
            .iter()
            .filter(|p| **p > 0.0)
            .map(|p| p * p.ln())
            .sum::<f64>();
        let got = entropy_uncertainty(&probs).unwrap();
        if (got - direct).abs() > 1e-12 {
            return Err(format!("case {case}: entropy {got} vs {direct}"));
        }
    }
    Ok(())
}
