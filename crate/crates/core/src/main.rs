//! Command-line entry point for running experiments.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use cl_lab::harness::{
    emit_csv, emit_plot_data, run_experiment, summarize, write_summary_json, ExperimentConfig,
    TrainingMode,
};
use cl_lab::metrics::ClassifierKind;
use cl_lab::{Error, Result};

#[derive(Parser)]
#[command(
    name = "cl-lab",
    about = "Train a small classifier over class-incremental tasks and measure \
             per-epoch stability metrics under linear-head and nearest-mean classification."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment from a JSON config and write CSV/JSON results.
    Run {
        /// Path to the experiment config (JSON).
        #[arg(long)]
        config: PathBuf,
        /// Output directory for result files.
        #[arg(long)]
        out: PathBuf,
        /// Override the config's seed list, e.g. --seeds 1,2,3.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        /// Override the training mode: sequential | joint.
        #[arg(long)]
        mode: Option<String>,
        /// Override the classifier kinds, e.g. --kinds linear,nmc,oracle_nmc.
        #[arg(long, value_delimiter = ',')]
        kinds: Option<Vec<String>>,
    },
}

fn parse_mode(s: &str) -> Result<TrainingMode> {
    match s {
        "sequential" => Ok(TrainingMode::Sequential),
        "joint" | "joint_incremental" => Ok(TrainingMode::JointIncremental),
        other => Err(Error::InvalidConfig(format!(
            "unknown mode {other:?}, expected sequential or joint"
        ))),
    }
}

fn run(
    config_path: &PathBuf,
    out: &PathBuf,
    seeds: Option<Vec<u64>>,
    mode: Option<String>,
    kinds: Option<Vec<String>>,
) -> Result<()> {
    let mut config = ExperimentConfig::from_json_file(config_path)?;
    if let Some(seeds) = seeds {
        config.seeds = seeds;
    }
    if let Some(mode) = mode {
        config.mode = parse_mode(&mode)?;
    }
    if let Some(kinds) = kinds {
        config.classifiers = kinds
            .iter()
            .map(|k| ClassifierKind::parse(k))
            .collect::<Result<Vec<_>>>()?;
    }
    config.validate()?;

    let result = run_experiment(&config)?;
    emit_csv(&result, out)?;
    emit_plot_data(&result, out)?;
    write_summary_json(&result, out)?;

    let summary = summarize(&result)?;
    println!(
        "{:<11} {:<14} {:>16} {:>16} {:>16} {:>16} {:>16}",
        "kind", "mode", "ACC", "min-ACC", "WC-ACC", "SG", "LTB"
    );
    let fmt = |s: Option<cl_lab::harness::Stat>| match s {
        Some(s) => format!("{:.4}±{:.4}", s.mean, s.stddev),
        None => "-".to_string(),
    };
    for row in &summary.rows {
        println!(
            "{:<11} {:<14} {:>16} {:>16} {:>16} {:>16} {:>16}",
            row.kind.name(),
            row.mode.name(),
            fmt(Some(row.acc)),
            fmt(row.min_acc),
            fmt(Some(row.wc_acc)),
            fmt(row.sg),
            fmt(row.final_ltb),
        );
    }
    println!("results written to {}", out.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Run {
            config,
            out,
            seeds,
            mode,
            kinds,
        } => run(config, out, seeds.clone(), mode.clone(), kinds.clone()),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
