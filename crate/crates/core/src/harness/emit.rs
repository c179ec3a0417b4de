//! Result serialization: CSV logs, plot-ready curves, and a JSON summary.
//!
//! Emission is deterministic: the same result writes byte-identical files.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::Result;
use crate::harness::runner::{summarize, RunResult};
use crate::metrics::EvalModeKind;

fn write_file(dir: &Path, name: &str, contents: &str) -> Result<PathBuf> {
    let path = dir.join(name);
    std::fs::write(&path, contents)?;
    Ok(path)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Write `accuracy_log.csv`, `metrics.csv`, `confusion.csv`, and `ltb.csv`.
pub fn emit_csv(result: &RunResult, out_dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let out_dir = out_dir.as_ref();
    std::fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();

    let mut log_csv = String::from("seed,kind,mode,train_task,epoch,eval_task,accuracy\n");
    for seed_result in &result.seed_results {
        for e in seed_result.log.entries() {
            writeln!(
                log_csv,
                "{},{},{},{},{},{},{}",
                seed_result.seed,
                e.kind.name(),
                e.mode.name(),
                e.train_task,
                e.epoch,
                e.eval_task,
                e.accuracy
            )
            .expect("write to string");
        }
    }
    written.push(write_file(out_dir, "accuracy_log.csv", &log_csv)?);

    let mut metrics_csv = String::from("seed,kind,mode,wc_acc,min_acc,sg,acc\n");
    for seed_result in &result.seed_results {
        for (&(kind, mode), values) in &seed_result.report.values {
            writeln!(
                metrics_csv,
                "{},{},{},{},{},{},{}",
                seed_result.seed,
                kind.name(),
                mode.name(),
                values.wc_acc,
                fmt_opt(values.min_acc),
                fmt_opt(values.aggregate_sg),
                values.acc
            )
            .expect("write to string");
        }
    }
    written.push(write_file(out_dir, "metrics.csv", &metrics_csv)?);

    let mut confusion_csv = String::from("seed,kind,true_task,predicted_task,count,fraction\n");
    for seed_result in &result.seed_results {
        for (kind, confusion) in &seed_result.final_confusion {
            let n = confusion.num_tasks();
            for row in 0..n {
                for col in 0..n {
                    writeln!(
                        confusion_csv,
                        "{},{},{},{},{},{}",
                        seed_result.seed,
                        kind.name(),
                        row + 1,
                        col + 1,
                        confusion.counts[(row, col)],
                        confusion.normalized[(row, col)]
                    )
                    .expect("write to string");
                }
            }
        }
    }
    written.push(write_file(out_dir, "confusion.csv", &confusion_csv)?);

    let mut ltb_csv = String::from("seed,kind,train_task,epoch,ltb\n");
    for seed_result in &result.seed_results {
        for (kind, series) in &seed_result.ltb_series {
            for point in series {
                writeln!(
                    ltb_csv,
                    "{},{},{},{},{}",
                    seed_result.seed,
                    kind.name(),
                    point.train_task,
                    point.epoch,
                    point.value
                )
                .expect("write to string");
            }
        }
    }
    written.push(write_file(out_dir, "ltb.csv", &ltb_csv)?);

    Ok(written)
}

/// Write per-(kind, mode) curves under `plots/`: first-task accuracy and
/// running average accuracy against the global epoch index, plus the
/// latest-task-bias curve for the task-agnostic mode. Values are means over
/// seeds.
pub fn emit_plot_data(result: &RunResult, out_dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let out_dir = out_dir.as_ref();
    let tasks = result.config.tasks;
    let epochs = result.config.epochs;
    let seeds = result.seed_results.len() as f64;
    let mut written = Vec::new();

    for &kind in &result.config.classifiers {
        for &mode in &result.config.eval_modes {
            let dir = out_dir
                .join("plots")
                .join(format!("{}_{}", kind.name(), mode.name()));
            std::fs::create_dir_all(&dir)?;

            let mut task1 = String::from("global_epoch,accuracy\n");
            let mut avg = String::from("global_epoch,accuracy\n");
            for t in 1..=tasks {
                for n in 1..=epochs {
                    let global = (t - 1) * epochs + n;
                    let mut task1_sum = 0.0;
                    let mut avg_sum = 0.0;
                    for seed_result in &result.seed_results {
                        let log = &seed_result.log;
                        task1_sum += log.get(kind, mode, t, n, 1).ok_or_else(|| {
                            crate::error::Error::MissingEntry(format!(
                                "task-1 accuracy at t={t}, n={n}"
                            ))
                        })?;
                        let mut per_epoch = 0.0;
                        for i in 1..=t {
                            per_epoch += log.get(kind, mode, t, n, i).ok_or_else(|| {
                                crate::error::Error::MissingEntry(format!(
                                    "accuracy at t={t}, n={n}, i={i}"
                                ))
                            })?;
                        }
                        avg_sum += per_epoch / t as f64;
                    }
                    writeln!(task1, "{},{}", global, task1_sum / seeds).expect("write to string");
                    writeln!(avg, "{},{}", global, avg_sum / seeds).expect("write to string");
                }
            }
            written.push(write_file(&dir, "task1_accuracy.csv", &task1)?);
            written.push(write_file(&dir, "avg_accuracy.csv", &avg)?);

            if mode == EvalModeKind::TaskAgnostic && tasks >= 2 {
                let mut ltb_curve = String::from("global_epoch,ltb\n");
                let points = result.seed_results[0].ltb_series[&kind].len();
                for idx in 0..points {
                    let first = result.seed_results[0].ltb_series[&kind][idx];
                    let mut sum = 0.0;
                    for seed_result in &result.seed_results {
                        sum += seed_result.ltb_series[&kind][idx].value;
                    }
                    let global = (first.train_task - 1) * epochs + first.epoch;
                    writeln!(ltb_curve, "{},{}", global, sum / seeds).expect("write to string");
                }
                written.push(write_file(&dir, "ltb_curve.csv", &ltb_curve)?);
            }
        }
    }
    Ok(written)
}

/// Write `summary.json`: the cross-seed mean and stddev of every metric,
/// mirroring `metrics.csv`.
pub fn write_summary_json(result: &RunResult, out_dir: impl AsRef<Path>) -> Result<PathBuf> {
    let out_dir = out_dir.as_ref();
    std::fs::create_dir_all(out_dir)?;
    let summary = summarize(result)?;
    let json = serde_json::to_string_pretty(&summary)?;
    write_file(out_dir, "summary.json", &format!("{json}\n"))
}
