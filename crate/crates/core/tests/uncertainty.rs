//! Dropout and uncertainty behaviour on untrained and trained models.

mod common;

use feduaf_core::datagen::{build_federation, FederationSpec};
use feduaf_core::fedsim::{Ablation, AggregationStrategy, Execution, ProtocolConfig, Simulation};
use feduaf_core::fusion::FusionMode;
use feduaf_core::model::{Architecture, ModelParams};
use feduaf_core::nn::{Activation, Mlp, Mode};
use feduaf_core::uncertainty::{
    mc_predict, modality_uncertainties, probe_uncertainties, variance_uncertainty,
};
use feduaf_core::{Modality, Rng};

#[test]
fn train_mode_mean_matches_eval_output() {
    let mut rng = Rng::new(21);
    let mut mlp = Mlp::build(
        &[4, 16, 3],
        Activation::Relu,
        Activation::Identity,
        0.5,
        &mut rng,
    )
    .unwrap();
    for t in mlp.tensors_mut() {
        for v in t.iter_mut() {
            *v = rng.uniform_range(0.1, 1.0);
        }
    }
    let x = [0.5, 1.0, 1.5, 2.0];
    let eval = mlp.predict(&x).unwrap();
    let n = 10_000;
    let mut mean = vec![0.0; 3];
    for _ in 0..n {
        let (y, _) = mlp.forward(&x, Mode::Train, &mut rng).unwrap();
        for (m, v) in mean.iter_mut().zip(&y) {
            *m += v / n as f64;
        }
    }
    for (m, e) in mean.iter().zip(&eval) {
        assert!((m - e).abs() <= 0.02 * e.abs(), "{m} vs {e}");
    }
}

/// Two-client federation trained for a few rounds with uniform fusion.
fn trained() -> Simulation {
    let spec = FederationSpec {
        num_clients: 2,
        samples_per_client: 300,
        missing_ratio: 0.0,
        seed: 4,
        ..FederationSpec::default()
    };
    let data = build_federation(&spec).unwrap();
    let arch = Architecture {
        feature_dims: [20, 20, 20],
        hidden_dim: 64,
        shared_dim: 32,
        dropout: 0.1,
    };
    let protocol =
        ProtocolConfig::for_strategy(AggregationStrategy::Uniform, Ablation::default(), 0.0);
    let mut sim = Simulation::new(data, &arch, protocol, 4, Execution::Serial).unwrap();
    for _ in 0..15 {
        sim.run_round().unwrap();
    }
    sim
}

#[test]
fn trained_model_uncertainty_behaviour() {
    let sim = trained();
    let client = &sim.clients[0];
    let model: &ModelParams = &client.model;
    let test = client.data.splits().test;

    // Nonzero spread under dropout.
    let preds = mc_predict(
        model,
        &test[0],
        FusionMode::Uncertainty,
        5,
        &mut Rng::new(1),
    )
    .unwrap();
    assert!(variance_uncertainty(&preds).unwrap() > 0.0);

    // A pure-noise audio channel is less stable than the clean text channel.
    // Twenty passes per probe: with five, the variance estimates themselves
    // scatter by about 70% and the per-trial comparison gets too noisy.
    let mut noisier = 0;
    let trials = 100;
    for trial in 0..trials {
        let mut rng = Rng::new(100 + trial);
        let mut sample = test[trial as usize % test.len()].clone();
        let noise: Vec<f64> = (0..20).map(|_| 5f64.sqrt() * rng.normal()).collect();
        *sample.features.get_mut(Modality::Audio).unwrap() = noise;
        let u = probe_uncertainties(model, &sample, 20, &mut rng).unwrap();
        if u.get(Modality::Audio).unwrap() > u.get(Modality::Text).unwrap() {
            noisier += 1;
        }
    }
    assert!(
        noisier * 10 >= trials * 9,
        "audio noisier in {noisier}/{trials}"
    );

    // Single available modality: one probe entry, and its weight is 1.
    let mut single = test[1].clone();
    single.features.remove(Modality::Visual);
    single.features.remove(Modality::Audio);
    single.mask = feduaf_core::ModalityMask::only(Modality::Text);
    let est = modality_uncertainties(model, &single, 5, &mut Rng::new(3)).unwrap();
    assert_eq!(est.per_modality.len(), 1);
    assert!(est.fused >= 0.0 && est.fused.is_finite());
}

#[test]
fn direct_formula_agreement_on_random_inputs() {
    common::formula_agreement(1000).unwrap();
}
