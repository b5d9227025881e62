use std::fs;
use std::path::Path;

use feduaf_core::config::ExperimentConfig;
use feduaf_core::fedsim::{Ablation, AggregationStrategy, Execution};
use feduaf_core::harness::{
    emit_plotdata, execute, read_sweep_csv, run_to_dir, sweep, GridSpec, RunSummary, ROUNDS_FILE,
    SUMMARY_FILE, SWEEP_FILE,
};
use feduaf_core::Error;

fn tiny_config(out: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.federation.num_clients = 3;
    cfg.federation.samples_per_client = 40;
    cfg.federation.missing_ratio = 0.4;
    cfg.model.hidden_dim = 12;
    cfg.model.shared_dim = 6;
    cfg.training.rounds = 3;
    cfg.training.local_epochs = 1;
    cfg.seeds = vec![1, 2];
    cfg.output_dir = out.to_path_buf();
    cfg
}

fn read(path: impl AsRef<Path>) -> String {
    fs::read_to_string(path.as_ref()).unwrap_or_else(|e| panic!("{}: {e}", path.as_ref().display()))
}

#[test]
fn reruns_write_identical_round_logs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path());
    run_to_dir(&cfg, 4, &tmp.path().join("a"), Execution::Serial).unwrap();
    run_to_dir(
        &cfg,
        4,
        &tmp.path().join("b"),
        Execution::Parallel { threads: 2 },
    )
    .unwrap();
    let a = read(tmp.path().join("a").join(ROUNDS_FILE));
    assert_eq!(a, read(tmp.path().join("b").join(ROUNDS_FILE)));
    assert_eq!(a.lines().count(), 3);
    let summary: RunSummary =
        serde_json::from_str(&read(tmp.path().join("a").join(SUMMARY_FILE))).unwrap();
    assert_eq!(summary.seed, 4);
    assert_eq!(summary.config, cfg);
}

#[test]
fn both_components_off_matches_plain_averaging() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = tiny_config(tmp.path());
    cfg.strategy = AggregationStrategy::ReliabilityWeighted;
    cfg.ablation = Ablation {
        ua_fusion: false,
        rel_agg: false,
    };
    run_to_dir(&cfg, 1, &tmp.path().join("off"), Execution::Serial).unwrap();
    cfg.strategy = AggregationStrategy::Uniform;
    cfg.ablation = Ablation::default();
    run_to_dir(&cfg, 1, &tmp.path().join("uniform"), Execution::Serial).unwrap();
    assert_eq!(
        read(tmp.path().join("off").join(ROUNDS_FILE)),
        read(tmp.path().join("uniform").join(ROUNDS_FILE))
    );
}

#[test]
fn single_point_grid_matches_run() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path());
    let result = sweep(&cfg, &GridSpec::default(), Execution::Serial).unwrap();
    assert!(result.errors.is_empty());
    assert_eq!(result.rows.len(), 1);
    let row = &result.rows[0];
    assert_eq!(row.seed_count, 2);

    let mut finals = Vec::new();
    for &seed in &cfg.seeds {
        let direct = execute(&cfg, seed, Execution::Serial).unwrap();
        finals.push(direct.summary.final_mae);
    }
    let mean = finals.iter().sum::<f64>() / finals.len() as f64;
    assert!(
        (row.mae_mean - mean).abs() <= 1e-12,
        "{} vs {mean}",
        row.mae_mean
    );

    // The stored per-seed summaries agree with the table too.
    let cells = tmp.path().join("cells");
    let cell = fs::read_dir(&cells)
        .unwrap()
        .next()
        .unwrap()
        .unwrap()
        .path();
    let stored: Vec<f64> = cfg
        .seeds
        .iter()
        .map(|s| {
            let s: RunSummary =
                serde_json::from_str(&read(cell.join(format!("seed-{s}")).join(SUMMARY_FILE)))
                    .unwrap();
            s.final_mae
        })
        .collect();
    assert_eq!(stored, finals);
}

#[test]
fn sweep_table_is_deterministic_and_plottable() {
    let grid = GridSpec::from_json(
        r#"{"missing_ratio": [0.8, 0.2], "strategy": ["uniform", "reliability_weighted"],
            "ablation": [{"ua_fusion": true, "rel_agg": true}, {"ua_fusion": false, "rel_agg": true}]}"#,
    )
    .unwrap();
    let run = || {
        let tmp = tempfile::tempdir().unwrap();
        let mut cfg = tiny_config(tmp.path());
        cfg.training.rounds = 2;
        cfg.seeds = vec![3];
        let result = sweep(&cfg, &grid, Execution::Serial).unwrap();
        assert!(result.errors.is_empty());
        (tmp, result)
    };
    let (a, ra) = run();
    let (b, _) = run();
    let csv_a = read(a.path().join(SWEEP_FILE));
    assert_eq!(csv_a, read(b.path().join(SWEEP_FILE)));
    assert!(csv_a.starts_with("dataset_tag,rho_m,noniid,noisy_ratio,strategy,ua_fusion,rel_agg,seed_count,mae_mean,mae_std\n"));
    // 2 rho values x (1 baseline + 2 ablation variants).
    assert_eq!(ra.rows.len(), 6);
    assert_eq!(read_sweep_csv(&a.path().join(SWEEP_FILE)).unwrap(), ra.rows);

    let out = a.path().join("plots");
    let files = emit_plotdata(&a.path().join(SWEEP_FILE), &out).unwrap();
    assert_eq!(files.len(), 3);
    let missing = read(out.join("missing_ratio.csv"));
    let lines: Vec<&str> = missing.lines().collect();
    assert_eq!(lines[0], "noniid,noisy_ratio,series,x,mae_mean,mae_std");
    assert_eq!(lines.len(), 7);
    let series: Vec<(&str, f64)> = lines[1..]
        .iter()
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (f[2], f[3].parse().unwrap())
        })
        .collect();
    assert_eq!(
        series,
        vec![
            ("reliability_weighted", 0.2),
            ("reliability_weighted", 0.8),
            ("reliability_weighted-no_ua_fusion", 0.2),
            ("reliability_weighted-no_ua_fusion", 0.8),
            ("uniform", 0.2),
            ("uniform", 0.8),
        ]
    );
}

#[test]
fn plotdata_rejects_missing_columns() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("bad.csv");
    fs::write(&path, "dataset_tag,rho_m,strategy\nsynthetic,0.2,uniform\n").unwrap();
    let err = emit_plotdata(&path, &tmp.path().join("out")).unwrap_err();
    assert!(matches!(err, Error::Schema(_)), "{err}");
    assert!(err.to_string().contains("mae_mean"), "{err}");
}

#[test]
fn failing_seed_is_recorded_not_fatal() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = tiny_config(tmp.path());
    cfg.training.lr = 1e300;
    cfg.seeds = vec![1];
    let result = sweep(&cfg, &GridSpec::default(), Execution::Serial).unwrap();
    assert_eq!(result.errors.len(), 1);
    assert!(
        result.errors[0].error.contains("diverged"),
        "{}",
        result.errors[0].error
    );
    assert!(tmp
        .path()
        .join(feduaf_core::harness::SWEEP_ERRORS_FILE)
        .exists());
}
