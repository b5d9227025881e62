//! Statistical properties of the synthetic generator.

use feduaf_core::datagen::{
    build_federation, client_label_means, generate_federation, inject_missing, mark_noisy_clients,
    FederationSpec, MissingStats,
};
use feduaf_core::Rng;

fn spec(num_clients: usize, samples: usize, kappa: f64, seed: u64) -> FederationSpec {
    FederationSpec {
        num_clients,
        samples_per_client: samples,
        noniid_intensity: kappa,
        missing_ratio: 0.0,
        noisy_ratio: 0.0,
        seed,
        ..FederationSpec::default()
    }
}

fn std_dev(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

#[test]
fn iid_limit_has_matching_client_means() {
    for seed in 1..=5 {
        let clients = generate_federation(&spec(2, 1000, 0.0, seed)).unwrap();
        let means = client_label_means(&clients);
        assert!((means[0] - means[1]).abs() < 0.1, "seed {seed}: {means:?}");
    }
}

#[test]
fn full_intensity_spreads_client_means() {
    for seed in 1..=5 {
        let clients = generate_federation(&spec(10, 200, 1.0, seed)).unwrap();
        let s = std_dev(&client_label_means(&clients));
        assert!(s > 1.0, "seed {seed}: std {s}");
    }
}

#[test]
fn label_mean_variance_grows_with_intensity() {
    let kappas = [0.0, 0.2, 0.4, 0.6, 0.8, 1.0];
    let avg_var: Vec<f64> = kappas
        .iter()
        .map(|&k| {
            (1..=5)
                .map(|seed| {
                    std_dev(&client_label_means(
                        &generate_federation(&spec(10, 200, k, seed)).unwrap(),
                    ))
                    .powi(2)
                })
                .sum::<f64>()
                / 5.0
        })
        .collect();
    for w in avg_var.windows(2) {
        assert!(w[1] >= w[0], "{avg_var:?}");
    }
}

fn missing_stats(rho: f64, samples: usize, seed: u64) -> MissingStats {
    let clean = generate_federation(&spec(2, samples, 0.2, seed)).unwrap();
    let mut rng = Rng::new(seed).derive(&[42]);
    inject_missing(&clean[0], rho, &mut rng).unwrap().1
}

#[test]
fn per_modality_drop_rate_matches_ratio() {
    let stats = missing_stats(0.8, 10_000, 3);
    for m in 0..3 {
        let dropped: usize = (0..8)
            .filter(|p| p & (1 << m) != 0)
            .map(|p| stats.patterns[p])
            .sum();
        let rate = dropped as f64 / 10_000.0;
        assert!((0.78..=0.82).contains(&rate), "modality {m}: {rate}");
    }
    assert_eq!(stats.pairs, 30_000);
}

#[test]
fn restoration_rate_is_cube_of_ratio() {
    for rho in [0.2, 0.5, 0.8] {
        let n = 20_000.0;
        let stats = missing_stats(rho, 20_000, 5);
        let p: f64 = rho * rho * rho;
        let sigma = (p * (1.0 - p) / n).sqrt();
        let rate = stats.restorations as f64 / n;
        assert!(
            (rate - p).abs() <= 3.0 * sigma,
            "rho {rho}: {rate} vs {p} (sigma {sigma})"
        );
        assert_eq!(stats.restorations, stats.patterns[7]);
    }
}

#[test]
fn drop_events_are_pairwise_independent() {
    // 2x2 chi-square with one degree of freedom; 6.635 is the 0.99 quantile.
    let stats = missing_stats(0.5, 10_000, 11);
    for (i, j) in [(0, 1), (0, 2), (1, 2)] {
        let mut table = [[0.0f64; 2]; 2];
        for (p, &count) in stats.patterns.iter().enumerate() {
            table[(p >> i) & 1][(p >> j) & 1] += count as f64;
        }
        let n: f64 = table.iter().flatten().sum();
        let mut chi2 = 0.0;
        for a in 0..2 {
            for b in 0..2 {
                let row: f64 = table[a].iter().sum();
                let col = table[0][b] + table[1][b];
                let expected = row * col / n;
                chi2 += (table[a][b] - expected).powi(2) / expected;
            }
        }
        assert!(chi2 < 6.635, "modalities {i},{j}: chi2 {chi2}");
    }
}

#[test]
fn every_sample_keeps_a_modality() {
    let fed = build_federation(&FederationSpec {
        missing_ratio: 0.95,
        ..FederationSpec::default()
    })
    .unwrap();
    for c in &fed {
        for s in &c.samples {
            assert!(s.mask.count() >= 1);
            s.validate().unwrap();
        }
    }
}

#[test]
fn noisy_marking_counts() {
    let clients = generate_federation(&spec(10, 5, 0.2, 1)).unwrap();
    for (ratio, expected) in [(0.0, 0), (0.2, 2), (0.6, 6), (1.0, 10)] {
        let marked = mark_noisy_clients(&clients, ratio, &mut Rng::new(8)).unwrap();
        assert_eq!(marked.iter().filter(|c| c.is_noisy).count(), expected);
    }
    let a = mark_noisy_clients(&clients, 0.4, &mut Rng::new(9)).unwrap();
    let b = mark_noisy_clients(&clients, 0.4, &mut Rng::new(9)).unwrap();
    assert_eq!(a, b);
}

#[test]
fn identical_specs_give_identical_federations() {
    let s = FederationSpec {
        missing_ratio: 0.5,
        noisy_ratio: 0.3,
        seed: 17,
        ..FederationSpec::default()
    };
    assert_eq!(build_federation(&s).unwrap(), build_federation(&s).unwrap());
}
