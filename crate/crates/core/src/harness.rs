//! Experiment driver: single runs with on-disk logs, grid sweeps over
//! heterogeneity settings and strategies, and tidy plot-data emission.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::datagen::{self, ClientDataset, FederationSpec};
use crate::error::{Error, Result};
use crate::fedsim::{
    Ablation, AggregationStrategy, EvalResult, Execution, RoundReport, Simulation,
};
use crate::rng::{tag, Rng};

pub const ROUNDS_FILE: &str = "rounds.jsonl";
pub const SUMMARY_FILE: &str = "summary.json";
pub const PREDICTIONS_FILE: &str = "predictions.jsonl";
pub const SWEEP_FILE: &str = "sweep.csv";
pub const SWEEP_ERRORS_FILE: &str = "sweep_errors.jsonl";

/// Contents of `summary.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub config: ExperimentConfig,
    pub seed: u64,
    pub rounds: usize,
    pub initial_mae: f64,
    pub final_mae: f64,
    pub noisy_clients: Vec<String>,
    pub wall_time_secs: f64,
}

/// Everything a run produced, in memory.
#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub summary: RunSummary,
    pub reports: Vec<RoundReport>,
    pub final_eval: EvalResult,
}

/// The clients for `seed`: loaded from `data_path` when set (noisy clients
/// are then marked from `federation.noisy_ratio`), otherwise generated with
/// the federation seed replaced by `seed`.
pub fn prepare_federation(cfg: &ExperimentConfig, seed: u64) -> Result<Vec<ClientDataset>> {
    match &cfg.data_path {
        Some(path) => {
            let clients = datagen::load_jsonl(path)?;
            let mut rng = Rng::new(seed).derive(&[tag("noisy")]);
            datagen::mark_noisy_clients(&clients, cfg.federation.noisy_ratio, &mut rng)
        }
        None => {
            let spec = FederationSpec {
                seed,
                ..cfg.federation.clone()
            };
            datagen::build_federation(&spec)
        }
    }
}

/// Builds a simulation for `seed` without running it.
pub fn simulation(cfg: &ExperimentConfig, seed: u64, execution: Execution) -> Result<Simulation> {
    cfg.validate()?;
    let clients = prepare_federation(cfg, seed)?;
    let dims = datagen::feature_dims(&clients);
    let feature_dims = [
        dims.get(crate::Modality::Visual).copied().unwrap_or(1),
        dims.get(crate::Modality::Audio).copied().unwrap_or(1),
        dims.get(crate::Modality::Text).copied().unwrap_or(1),
    ];
    Simulation::new(
        clients,
        &cfg.architecture(feature_dims),
        cfg.protocol(),
        seed,
        execution,
    )
}

/// Runs all rounds for one seed in memory.
pub fn execute(cfg: &ExperimentConfig, seed: u64, execution: Execution) -> Result<RunOutcome> {
    let start = Instant::now();
    let mut sim = simulation(cfg, seed, execution)?;
    let initial_mae = sim.evaluate()?.mae;
    let mut reports = Vec::with_capacity(cfg.training.rounds);
    for _ in 0..cfg.training.rounds {
        let report = sim.run_round()?;
        log::debug!(
            "seed {seed} round {}: test MAE {:.4}",
            report.round,
            report.test_mae
        );
        reports.push(report);
    }
    let final_eval = sim.evaluate()?;
    let summary = RunSummary {
        config: cfg.clone(),
        seed,
        rounds: cfg.training.rounds,
        initial_mae,
        final_mae: final_eval.mae,
        noisy_clients: sim
            .clients
            .iter()
            .filter(|c| c.is_noisy())
            .map(|c| c.id().to_string())
            .collect(),
        wall_time_secs: start.elapsed().as_secs_f64(),
    };
    Ok(RunOutcome {
        summary,
        reports,
        final_eval,
    })
}

/// Runs one seed and writes `rounds.jsonl`, `predictions.jsonl` and
/// `summary.json` into `run_dir`.
pub fn run_to_dir(
    cfg: &ExperimentConfig,
    seed: u64,
    run_dir: &Path,
    execution: Execution,
) -> Result<RunOutcome> {
    let outcome = execute(cfg, seed, execution)?;
    write_run(&outcome, run_dir)?;
    Ok(outcome)
}

#[derive(Serialize)]
struct PredictionRecord<'a> {
    client_id: &'a str,
    prediction: f64,
    label: f64,
}

pub fn write_run(outcome: &RunOutcome, run_dir: &Path) -> Result<()> {
    fs::create_dir_all(run_dir).map_err(|e| Error::io(run_dir, e))?;
    write_lines(&run_dir.join(ROUNDS_FILE), outcome.reports.iter())?;
    let preds = outcome.final_eval.clients.iter().flat_map(|c| {
        c.predictions
            .iter()
            .zip(&c.labels)
            .map(move |(&prediction, &label)| PredictionRecord {
                client_id: &c.client_id,
                prediction,
                label,
            })
    });
    write_lines(&run_dir.join(PREDICTIONS_FILE), preds)?;
    let path = run_dir.join(SUMMARY_FILE);
    let text = serde_json::to_string_pretty(&outcome.summary)?;
    fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
}

fn write_lines<T: Serialize>(path: &Path, items: impl Iterator<Item = T>) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for item in items {
        serde_json::to_writer(&mut w, &item)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Directory of a single run for `seed` under the configured output dir.
pub fn seed_dir(cfg: &ExperimentConfig, seed: u64) -> PathBuf {
    cfg.output_dir.join(format!("seed-{seed}"))
}

/// Axes of a sweep; omitted axes keep the base config's value.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    pub noniid_intensity: Option<Vec<f64>>,
    pub missing_ratio: Option<Vec<f64>>,
    pub noisy_ratio: Option<Vec<f64>>,
    pub strategy: Option<Vec<AggregationStrategy>>,
    pub ablation: Option<Vec<Ablation>>,
}

impl GridSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de)
            .map_err(|e| Error::Config(format!("grid {}: {}", e.path(), e.inner())))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// Every cell in a fixed order: non-IID intensity, missing ratio, noisy
    /// ratio, strategy, ablation. Baselines ignore the ablation axis, so they
    /// appear once per setting.
    pub fn cells(&self, base: &ExperimentConfig) -> Result<Vec<SweepCell>> {
        let axis = |v: &Option<Vec<f64>>, default: f64, name: &str| -> Result<Vec<f64>> {
            match v {
                Some(v) if v.is_empty() => Err(Error::Config(format!("grid axis {name} is empty"))),
                Some(v) => Ok(v.clone()),
                None => Ok(vec![default]),
            }
        };
        let kappas = axis(
            &self.noniid_intensity,
            base.federation.noniid_intensity,
            "noniid_intensity",
        )?;
        let rhos = axis(
            &self.missing_ratio,
            base.federation.missing_ratio,
            "missing_ratio",
        )?;
        let noisy = axis(
            &self.noisy_ratio,
            base.federation.noisy_ratio,
            "noisy_ratio",
        )?;
        let strategies = self.strategy.clone().unwrap_or_else(|| vec![base.strategy]);
        let ablations = self.ablation.clone().unwrap_or_else(|| vec![base.ablation]);
        if strategies.is_empty() || ablations.is_empty() {
            return Err(Error::Config("grid axes must not be empty".into()));
        }
        let mut cells = Vec::new();
        for &noniid in &kappas {
            for &rho_m in &rhos {
                for &noisy_ratio in &noisy {
                    for &strategy in &strategies {
                        let abls: &[Ablation] =
                            if strategy == AggregationStrategy::ReliabilityWeighted {
                                &ablations
                            } else {
                                &[Ablation {
                                    ua_fusion: false,
                                    rel_agg: false,
                                }]
                            };
                        for &ablation in abls {
                            let cell = SweepCell {
                                noniid,
                                rho_m,
                                noisy_ratio,
                                strategy,
                                ablation,
                            };
                            if !cells.contains(&cell) {
                                cells.push(cell);
                            }
                        }
                    }
                }
            }
        }
        Ok(cells)
    }
}

/// One grid point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SweepCell {
    pub noniid: f64,
    pub rho_m: f64,
    pub noisy_ratio: f64,
    pub strategy: AggregationStrategy,
    /// Effective component switches (both off for baselines).
    pub ablation: Ablation,
}

impl SweepCell {
    pub fn apply(&self, base: &ExperimentConfig) -> ExperimentConfig {
        let mut cfg = base.clone();
        cfg.federation.noniid_intensity = self.noniid;
        cfg.federation.missing_ratio = self.rho_m;
        cfg.federation.noisy_ratio = self.noisy_ratio;
        cfg.strategy = self.strategy;
        cfg.ablation = self.ablation;
        cfg
    }

    pub fn dir_name(&self) -> String {
        format!(
            "k{}_rho{}_noisy{}_{}_ua{}_rel{}",
            self.noniid,
            self.rho_m,
            self.noisy_ratio,
            self.strategy.name(),
            u8::from(self.ablation.ua_fusion),
            u8::from(self.ablation.rel_agg)
        )
    }
}

/// One row of `sweep.csv`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub dataset_tag: String,
    pub rho_m: f64,
    pub noniid: f64,
    pub noisy_ratio: f64,
    pub strategy: AggregationStrategy,
    pub ua_fusion: bool,
    pub rel_agg: bool,
    pub seed_count: usize,
    pub mae_mean: f64,
    pub mae_std: f64,
}

/// A cell (or seed) that failed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepError {
    pub rho_m: f64,
    pub noniid: f64,
    pub noisy_ratio: f64,
    pub strategy: AggregationStrategy,
    pub ua_fusion: bool,
    pub rel_agg: bool,
    pub seed: u64,
    pub error: String,
}

#[derive(Clone, Debug, Default)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    pub errors: Vec<SweepError>,
    /// Per-seed final MAE of every completed run, aligned with `rows`.
    pub per_seed: Vec<Vec<(u64, f64)>>,
}

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

/// Runs every cell for every configured seed, writing each run under
/// `<output_dir>/cells/<cell>/seed-<s>/` and the table to
/// `<output_dir>/sweep.csv`. Failed runs are recorded and skipped.
pub fn sweep(
    base: &ExperimentConfig,
    grid: &GridSpec,
    execution: Execution,
) -> Result<SweepResult> {
    base.validate()?;
    let cells = grid.cells(base)?;
    let run_cell = |cell: &SweepCell| -> (Vec<(u64, f64)>, Vec<SweepError>) {
        let cfg = cell.apply(base);
        let mut done = Vec::new();
        let mut errors = Vec::new();
        for &seed in &base.seeds {
            let dir = base
                .output_dir
                .join("cells")
                .join(cell.dir_name())
                .join(format!("seed-{seed}"));
            let result = cfg
                .validate()
                .and_then(|_| run_to_dir(&cfg, seed, &dir, Execution::Serial));
            match result {
                Ok(out) => done.push((seed, out.summary.final_mae)),
                Err(e) => {
                    log::warn!("sweep cell {} seed {seed} failed: {e}", cell.dir_name());
                    errors.push(SweepError {
                        rho_m: cell.rho_m,
                        noniid: cell.noniid,
                        noisy_ratio: cell.noisy_ratio,
                        strategy: cell.strategy,
                        ua_fusion: cell.ablation.ua_fusion,
                        rel_agg: cell.ablation.rel_agg,
                        seed,
                        error: e.to_string(),
                    })
                }
            }
        }
        (done, errors)
    };
    let results: Vec<_> = match execution {
        Execution::Serial => cells.iter().map(run_cell).collect(),
        Execution::Parallel { threads } => rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| Error::State(format!("thread pool: {e}")))?
            .install(|| cells.par_iter().map(run_cell).collect()),
    };

    let mut out = SweepResult::default();
    for (cell, (done, errors)) in cells.iter().zip(results) {
        out.errors.extend(errors);
        if done.is_empty() {
            continue;
        }
        let maes: Vec<f64> = done.iter().map(|(_, m)| *m).collect();
        let (mae_mean, mae_std) = mean_std(&maes);
        out.rows.push(SweepRow {
            dataset_tag: base.dataset_tag.clone(),
            rho_m: cell.rho_m,
            noniid: cell.noniid,
            noisy_ratio: cell.noisy_ratio,
            strategy: cell.strategy,
            ua_fusion: cell.ablation.ua_fusion,
            rel_agg: cell.ablation.rel_agg,
            seed_count: done.len(),
            mae_mean,
            mae_std,
        });
        out.per_seed.push(done);
    }
    fs::create_dir_all(&base.output_dir).map_err(|e| Error::io(&base.output_dir, e))?;
    write_sweep_csv(&base.output_dir.join(SWEEP_FILE), &out.rows)?;
    write_lines(&base.output_dir.join(SWEEP_ERRORS_FILE), out.errors.iter())?;
    Ok(out)
}

pub fn write_sweep_csv(path: &Path, rows: &[SweepRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    if rows.is_empty() {
        w.write_record(SWEEP_COLUMNS)?;
    }
    for row in rows {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub const SWEEP_COLUMNS: [&str; 10] = [
    "dataset_tag",
    "rho_m",
    "noniid",
    "noisy_ratio",
    "strategy",
    "ua_fusion",
    "rel_agg",
    "seed_count",
    "mae_mean",
    "mae_std",
];

pub fn read_sweep_csv(path: &Path) -> Result<Vec<SweepRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let headers = r.headers()?.clone();
    let missing: Vec<&str> = SWEEP_COLUMNS
        .iter()
        .copied()
        .filter(|c| !headers.iter().any(|h| h == *c))
        .collect();
    if !missing.is_empty() {
        return Err(Error::Schema(format!(
            "{}: missing column(s) {}",
            path.display(),
            missing.join(", ")
        )));
    }
    let mut rows = Vec::new();
    for rec in r.deserialize() {
        rows.push(rec.map_err(|e: csv::Error| Error::Schema(format!("{}: {e}", path.display())))?);
    }
    Ok(rows)
}

/// Series label: the strategy name, with disabled components appended for
/// the uncertainty-aware strategy.
pub fn series_label(row: &SweepRow) -> String {
    let mut s = row.strategy.name().to_string();
    if row.strategy == AggregationStrategy::ReliabilityWeighted {
        if !row.ua_fusion {
            s.push_str("-no_ua_fusion");
        }
        if !row.rel_agg {
            s.push_str("-no_rel_agg");
        }
    }
    s
}

#[derive(Debug, Serialize)]
struct CurvePoint<'a> {
    facet_a: f64,
    facet_b: f64,
    series: &'a str,
    x: f64,
    mae_mean: f64,
    mae_std: f64,
}

/// Writes one tidy CSV per figure axis into `out_dir`:
/// `missing_ratio.csv`, `noisy_ratio.csv` and `noniid.csv`. Each has the
/// two remaining axes as facet columns, then `series, x, mae_mean, mae_std`,
/// sorted by facets, series and ascending `x`. Returns the written paths.
pub fn emit_plotdata(sweep_csv: &Path, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let rows = read_sweep_csv(sweep_csv)?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    type Axis = fn(&SweepRow) -> f64;
    type Figure = (&'static str, Axis, [(&'static str, Axis); 2]);
    let figures: [Figure; 3] = [
        (
            "missing_ratio",
            |r| r.rho_m,
            [("noniid", |r| r.noniid), ("noisy_ratio", |r| r.noisy_ratio)],
        ),
        (
            "noisy_ratio",
            |r| r.noisy_ratio,
            [("rho_m", |r| r.rho_m), ("noniid", |r| r.noniid)],
        ),
        (
            "noniid",
            |r| r.noniid,
            [("rho_m", |r| r.rho_m), ("noisy_ratio", |r| r.noisy_ratio)],
        ),
    ];
    let labels: Vec<String> = rows.iter().map(series_label).collect();
    let mut written = Vec::new();
    for (name, x_of, facets) in figures {
        let mut points: Vec<CurvePoint> = rows
            .iter()
            .zip(&labels)
            .map(|(r, label)| CurvePoint {
                facet_a: facets[0].1(r),
                facet_b: facets[1].1(r),
                series: label,
                x: x_of(r),
                mae_mean: r.mae_mean,
                mae_std: r.mae_std,
            })
            .collect();
        points.sort_by(|a, b| {
            a.facet_a
                .total_cmp(&b.facet_a)
                .then(a.facet_b.total_cmp(&b.facet_b))
                .then(a.series.cmp(b.series))
                .then(a.x.total_cmp(&b.x))
        });
        let path = out_dir.join(format!("{name}.csv"));
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record([
            facets[0].0,
            facets[1].0,
            "series",
            "x",
            "mae_mean",
            "mae_std",
        ])?;
        for p in &points {
            w.write_record([
                p.facet_a.to_string(),
                p.facet_b.to_string(),
                p.series.to_string(),
                p.x.to_string(),
                p.mae_mean.to_string(),
                p.mae_std.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
        written.push(path);
    }
    Ok(written)
}
