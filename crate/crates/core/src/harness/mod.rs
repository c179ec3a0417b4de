//! Experiment orchestration: configuration, the training/evaluation loop,
//! and result serialization.

pub mod config;
pub mod emit;
pub mod runner;

pub use config::{DataConfig, ExperimentConfig, PretrainConfig, TrainingMode};
pub use emit::{emit_csv, emit_plot_data, write_summary_json};
pub use runner::{run_experiment, summarize, LtbPoint, RunResult, SeedResult, Stat, Summary, SummaryRow};
