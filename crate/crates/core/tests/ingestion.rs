//! JSONL loading, validation errors and round trips.

use std::path::{Path, PathBuf};

use feduaf_core::config::ExperimentConfig;
use feduaf_core::datagen::{build_federation, load_jsonl, write_jsonl, FederationSpec};
use feduaf_core::fedsim::Execution;
use feduaf_core::harness;
use feduaf_core::{Error, Modality};

fn fixture() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/two_speakers.jsonl")
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

#[test]
fn fixture_loads_grouped_by_client() {
    let clients = load_jsonl(&fixture()).unwrap();
    assert_eq!(clients.len(), 2);
    assert_eq!(clients[0].client_id, "spk01");
    assert_eq!(clients[1].client_id, "spk02");
    assert!(clients.iter().all(|c| c.samples.len() == 5));
    let s = &clients[0].samples[2];
    assert_eq!(
        s.mask.available().collect::<Vec<_>>(),
        vec![Modality::Audio]
    );
    assert_eq!(
        s.features.get(Modality::Audio).unwrap(),
        &vec![1.5, 0.25, -2.2]
    );
    assert_eq!(clients[0].samples[4].label, -3.0);
}

#[test]
fn write_then_load_is_bit_identical() {
    let dir = tempfile::tempdir().unwrap();
    let clients = load_jsonl(&fixture()).unwrap();
    let p1 = dir.path().join("a.jsonl");
    write_jsonl(&p1, &clients).unwrap();
    let again = load_jsonl(&p1).unwrap();
    assert_eq!(clients, again);
    let p2 = dir.path().join("b.jsonl");
    write_jsonl(&p2, &again).unwrap();
    assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());

    // Generated data with full-precision floats survives as well.
    let generated = build_federation(&FederationSpec {
        num_clients: 3,
        samples_per_client: 20,
        missing_ratio: 0.5,
        ..FederationSpec::default()
    })
    .unwrap();
    let p3 = dir.path().join("c.jsonl");
    write_jsonl(&p3, &generated).unwrap();
    let loaded = load_jsonl(&p3).unwrap();
    for (a, b) in generated.iter().zip(&loaded) {
        assert_eq!(a.client_id, b.client_id);
        assert_eq!(a.samples, b.samples);
    }
}

#[test]
fn fixture_trains_two_rounds() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig {
        data_path: Some(fixture()),
        training: feduaf_core::config::TrainingConfig {
            rounds: 2,
            local_epochs: 1,
            ..Default::default()
        },
        model: feduaf_core::config::ModelConfig {
            hidden_dim: 8,
            shared_dim: 4,
            ..Default::default()
        },
        seeds: vec![1],
        output_dir: dir.path().to_path_buf(),
        ..Default::default()
    };
    let out = harness::run_to_dir(&cfg, 1, &harness::seed_dir(&cfg, 1), Execution::Serial).unwrap();
    assert_eq!(out.reports.len(), 2);
    assert!(out.summary.final_mae.is_finite());
    let rounds = std::fs::read_to_string(dir.path().join("seed-1/rounds.jsonl")).unwrap();
    assert_eq!(rounds.lines().count(), 2);
}

#[test]
fn empty_file_is_empty_federation() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(dir.path(), "empty.jsonl", "");
    let err = load_jsonl(&p).unwrap_err();
    assert!(matches!(err, Error::DegenerateInput(_)));
    assert!(err.to_string().contains("empty federation"));
}

#[test]
fn mask_without_features_names_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let good = std::fs::read_to_string(fixture()).unwrap();
    let first = good.lines().next().unwrap();
    let bad = r#"{"client_id": "spk03", "features": {"a": [0.0, 0.0, 0.0]}, "mask": {"v": 1, "a": 1, "t": 0}, "label": 0.5}"#;
    let p = write(dir.path(), "bad.jsonl", &format!("{first}\n{bad}\n"));
    let err = load_jsonl(&p).unwrap_err();
    assert!(matches!(err, Error::Validation(_)), "{err}");
    assert!(err.to_string().contains("line 2"), "{err}");
}

#[test]
fn malformed_json_reports_line_number() {
    let dir = tempfile::tempdir().unwrap();
    let good = std::fs::read_to_string(fixture()).unwrap();
    let mut lines: Vec<&str> = good.lines().take(3).collect();
    lines.push("{\"client_id\": \"spk01\", ");
    let p = write(dir.path(), "broken.jsonl", &lines.join("\n"));
    match load_jsonl(&p).unwrap_err() {
        Error::Parse { line, .. } => assert_eq!(line, 4),
        other => panic!("unexpected {other}"),
    }
}

#[test]
fn out_of_range_label_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let bad = r#"{"client_id": "x", "features": {"t": [1.0]}, "mask": {"v": 0, "a": 0, "t": 1}, "label": 3.5}"#;
    let p = write(dir.path(), "label.jsonl", bad);
    let err = load_jsonl(&p).unwrap_err();
    assert!(matches!(err, Error::Validation(_)), "{err}");
    assert!(err.to_string().contains("line 1"), "{err}");
}

#[test]
fn unknown_fields_and_bad_mask_bits_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let extra = r#"{"client_id": "x", "features": {"t": [1.0]}, "mask": {"v": 0, "a": 0, "t": 1}, "label": 0.0, "speaker": 3}"#;
    let p = write(dir.path(), "extra.jsonl", extra);
    assert!(matches!(
        load_jsonl(&p).unwrap_err(),
        Error::Parse { line: 1, .. }
    ));
    let bits = r#"{"client_id": "x", "features": {"t": [1.0]}, "mask": {"v": 0, "a": 0, "t": 2}, "label": 0.0}"#;
    let p = write(dir.path(), "bits.jsonl", bits);
    assert!(matches!(load_jsonl(&p).unwrap_err(), Error::Validation(_)));
}
