use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};

use feduaf_core::config::ExperimentConfig;
use feduaf_core::datagen::{self, FederationSpec};
use feduaf_core::fedsim::Execution;
use feduaf_core::harness::{self, GridSpec};

/// Federated multimodal regression experiments.
#[derive(Debug, Parser)]
#[command(name = "feduaf", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic federation and write it as JSONL.
    GenData {
        /// Federation spec (JSON).
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train and evaluate for each configured seed (or only `--seed`).
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run a grid of settings x seeds and write sweep.csv.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        grid: PathBuf,
    },
    /// Turn a sweep.csv into per-figure tidy CSVs.
    Plotdata {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Exit code 1: bad input or configuration. Exit code 2: failure while running.
enum Failure {
    Config(anyhow::Error),
    Runtime(anyhow::Error),
}

impl From<feduaf_core::Error> for Failure {
    fn from(e: feduaf_core::Error) -> Self {
        if e.is_config_error() {
            Failure::Config(e.into())
        } else {
            Failure::Runtime(e.into())
        }
    }
}

fn config_input<T>(r: feduaf_core::Result<T>, path: &Path) -> Result<T, Failure> {
    r.with_context(|| format!("reading {}", path.display()))
        .map_err(Failure::Config)
}

fn execute(cmd: Command) -> Result<(), Failure> {
    match cmd {
        Command::GenData { spec, out } => {
            let text = std::fs::read_to_string(&spec)
                .with_context(|| format!("reading {}", spec.display()))
                .map_err(Failure::Config)?;
            let spec_value = config_input(FederationSpec::from_json(&text), &spec)?;
            let clients = datagen::build_federation(&spec_value)?;
            if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
                std::fs::create_dir_all(parent)
                    .with_context(|| format!("creating {}", parent.display()))
                    .map_err(Failure::Runtime)?;
            }
            datagen::write_jsonl(&out, &clients)?;
            let n: usize = clients.iter().map(|c| c.samples.len()).sum();
            println!(
                "wrote {} clients, {n} samples to {}",
                clients.len(),
                out.display()
            );
        }
        Command::Run { config, seed } => {
            let cfg = config_input(ExperimentConfig::load(&config), &config)?;
            let seeds = seed.map(|s| vec![s]).unwrap_or_else(|| cfg.seeds.clone());
            let execution = Execution::from_env();
            for s in seeds {
                let dir = harness::seed_dir(&cfg, s);
                let out = harness::run_to_dir(&cfg, s, &dir, execution)?;
                println!(
                    "seed {s}: initial MAE {:.4}, final MAE {:.4} ({:.1}s) -> {}",
                    out.summary.initial_mae,
                    out.summary.final_mae,
                    out.summary.wall_time_secs,
                    dir.display()
                );
            }
        }
        Command::Sweep { config, grid } => {
            let cfg = config_input(ExperimentConfig::load(&config), &config)?;
            let grid_spec = config_input(GridSpec::load(&grid), &grid)?;
            let result = harness::sweep(&cfg, &grid_spec, Execution::from_env())?;
            for row in &result.rows {
                println!(
                    "{:<42} rho_m={} noniid={} noisy={}: {:.4} +- {:.4} ({} seeds)",
                    harness::series_label(row),
                    row.rho_m,
                    row.noniid,
                    row.noisy_ratio,
                    row.mae_mean,
                    row.mae_std,
                    row.seed_count
                );
            }
            for e in &result.errors {
                eprintln!("failed: {} seed {}: {}", e.strategy.name(), e.seed, e.error);
            }
            println!(
                "wrote {}",
                cfg.output_dir.join(harness::SWEEP_FILE).display()
            );
        }
        Command::Plotdata { input, out } => {
            let written = config_input(harness::emit_plotdata(&input, &out), &input)?;
            for p in written {
                println!("wrote {}", p.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
