//! Accuracy log and continual-evaluation metrics.
//!
//! The log stores `A(kind, mode, t, n, i)`: the accuracy on eval task `i` of
//! the model trained for `n` epochs on training task `t` under one classifier
//! kind and eval mode. Tasks and epochs are 1-based here, matching the metric
//! definitions:
//!
//! * `ACC_t`      — mean end-of-task-`t` accuracy over tasks `1..=t`.
//! * `min-ACC_t`  — mean over previous tasks of the minimum accuracy observed
//!   at any epoch of any later task.
//! * `WC-ACC_t,k` — `(1/t) A(t, k, t) + (1 - 1/t) min-ACC_t`.
//! * `SG_t,i`     — normalized maximum drop on task `i` while training task
//!   `t`, relative to the end-of-task-`t-1` accuracy.
//! * `LTB_t`      — mean row-normalized confusion mass that previous tasks
//!   send into the latest task's columns.

use std::collections::BTreeMap;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ClassId;

/// Classification regime being scored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassifierKind {
    Linear,
    Nmc,
    OracleNmc,
}

impl ClassifierKind {
    pub fn name(self) -> &'static str {
        match self {
            ClassifierKind::Linear => "linear",
            ClassifierKind::Nmc => "nmc",
            ClassifierKind::OracleNmc => "oracle_nmc",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(ClassifierKind::Linear),
            "nmc" => Ok(ClassifierKind::Nmc),
            "oracle_nmc" => Ok(ClassifierKind::OracleNmc),
            other => Err(Error::InvalidConfig(format!(
                "unknown classifier kind {other:?}"
            ))),
        }
    }
}

/// Evaluation scope category for the log.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalModeKind {
    TaskAgnostic,
    TaskAware,
}

impl EvalModeKind {
    pub fn name(self) -> &'static str {
        match self {
            EvalModeKind::TaskAgnostic => "task_agnostic",
            EvalModeKind::TaskAware => "task_aware",
        }
    }
}

type Key = (ClassifierKind, EvalModeKind, usize, usize, usize);

/// One recorded evaluation point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogEntry {
    pub kind: ClassifierKind,
    pub mode: EvalModeKind,
    pub train_task: usize,
    pub epoch: usize,
    pub eval_task: usize,
    pub accuracy: f64,
}

/// Append-only store of per-epoch accuracies.
#[derive(Debug, Clone)]
pub struct AccuracyLog {
    epochs_per_task: usize,
    entries: BTreeMap<Key, f64>,
}

impl AccuracyLog {
    pub fn new(epochs_per_task: usize) -> Result<Self> {
        if epochs_per_task == 0 {
            return Err(Error::InvalidConfig(
                "epochs_per_task must be positive".into(),
            ));
        }
        Ok(AccuracyLog {
            epochs_per_task,
            entries: BTreeMap::new(),
        })
    }

    pub fn epochs_per_task(&self) -> usize {
        self.epochs_per_task
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Record `A(f_t^n, y_i)`. Rejects duplicates, out-of-range accuracies,
    /// evaluation of unseen tasks (`i > t`), and out-of-range epochs.
    pub fn record(
        &mut self,
        kind: ClassifierKind,
        mode: EvalModeKind,
        train_task: usize,
        epoch: usize,
        eval_task: usize,
        accuracy: f64,
    ) -> Result<()> {
        if !(0.0..=1.0).contains(&accuracy) {
            return Err(Error::InvalidConfig(format!(
                "accuracy {accuracy} outside [0, 1]"
            )));
        }
        if train_task == 0 || eval_task == 0 {
            return Err(Error::InvalidConfig("tasks are 1-based".into()));
        }
        if eval_task > train_task {
            return Err(Error::InvalidConfig(format!(
                "eval task {eval_task} not yet seen at training task {train_task}"
            )));
        }
        if epoch == 0 || epoch > self.epochs_per_task {
            return Err(Error::EpochOutOfRange {
                epoch,
                total: self.epochs_per_task,
            });
        }
        let key = (kind, mode, train_task, epoch, eval_task);
        if self.entries.contains_key(&key) {
            return Err(Error::DuplicateEntry(format!("{key:?}")));
        }
        self.entries.insert(key, accuracy);
        Ok(())
    }

    pub fn get(
        &self,
        kind: ClassifierKind,
        mode: EvalModeKind,
        train_task: usize,
        epoch: usize,
        eval_task: usize,
    ) -> Option<f64> {
        self.entries
            .get(&(kind, mode, train_task, epoch, eval_task))
            .copied()
    }

    fn require(
        &self,
        kind: ClassifierKind,
        mode: EvalModeKind,
        train_task: usize,
        epoch: usize,
        eval_task: usize,
    ) -> Result<f64> {
        self.get(kind, mode, train_task, epoch, eval_task)
            .ok_or_else(|| {
                Error::MissingEntry(format!(
                    "({}, {}, t={train_task}, n={epoch}, i={eval_task})",
                    kind.name(),
                    mode.name()
                ))
            })
    }

    /// Highest training task recorded for this (kind, mode), or 0.
    pub fn max_train_task(&self, kind: ClassifierKind, mode: EvalModeKind) -> usize {
        self.entries
            .keys()
            .filter(|(k, m, ..)| *k == kind && *m == mode)
            .map(|&(_, _, t, _, _)| t)
            .max()
            .unwrap_or(0)
    }

    /// All entries in key order.
    pub fn entries(&self) -> impl Iterator<Item = LogEntry> + '_ {
        self.entries
            .iter()
            .map(|(&(kind, mode, train_task, epoch, eval_task), &accuracy)| LogEntry {
                kind,
                mode,
                train_task,
                epoch,
                eval_task,
                accuracy,
            })
    }

    /// `ACC_t`: mean accuracy over tasks `1..=t` at the end of task `t`.
    pub fn avg_accuracy(
        &self,
        kind: ClassifierKind,
        mode: EvalModeKind,
        t: usize,
    ) -> Result<f64> {
        if t == 0 {
            return Err(Error::UndefinedMetric("ACC needs t >= 1".into()));
        }
        let e = self.epochs_per_task;
        let mut sum = 0.0;
        for i in 1..=t {
            sum += self.require(kind, mode, t, e, i)?;
        }
        Ok(sum / t as f64)
    }

    /// `min-ACC_t`: for each previous task, the minimum accuracy over every
    /// epoch of every later task up to `t`, averaged over previous tasks.
    pub fn min_acc(&self, kind: ClassifierKind, mode: EvalModeKind, t: usize) -> Result<f64> {
        if t < 2 {
            return Err(Error::UndefinedMetric("min-ACC needs t >= 2".into()));
        }
        let mut sum = 0.0;
        for i in 1..t {
            sum += self.min_over_later_training(kind, mode, i, t)?;
        }
        Ok(sum / (t - 1) as f64)
    }

    fn min_over_later_training(
        &self,
        kind: ClassifierKind,
        mode: EvalModeKind,
        eval_task: usize,
        t: usize,
    ) -> Result<f64> {
        let mut min = f64::INFINITY;
        for n in (eval_task + 1)..=t {
            for epoch in 1..=self.epochs_per_task {
                min = min.min(self.require(kind, mode, n, epoch, eval_task)?);
            }
        }
        Ok(min)
    }

    /// `WC-ACC_{t,k}`: trade-off between epoch-`k` accuracy on task `t` and
    /// `min-ACC_t`. For `t = 1` the second term vanishes.
    pub fn wc_acc(
        &self,
        kind: ClassifierKind,
        mode: EvalModeKind,
        t: usize,
        k: usize,
    ) -> Result<f64> {
        let current = self.require(kind, mode, t, k, t)?;
        if t == 1 {
            return Ok(current);
        }
        let min_acc = self.min_acc(kind, mode, t)?;
        Ok(current / t as f64 + (1.0 - 1.0 / t as f64) * min_acc)
    }

    /// `SG_{t,i}`: drop on task `i` during task `t`, normalized by the
    /// accuracy at the end of task `t-1`. Undefined when that accuracy is 0.
    pub fn stability_gap(
        &self,
        kind: ClassifierKind,
        mode: EvalModeKind,
        t: usize,
        i: usize,
    ) -> Result<f64> {
        if i >= t || i == 0 {
            return Err(Error::UndefinedMetric(format!(
                "SG needs 1 <= i < t, got t={t}, i={i}"
            )));
        }
        let start = self.require(kind, mode, t - 1, self.epochs_per_task, i)?;
        if start == 0.0 {
            return Err(Error::UndefinedMetric(format!(
                "SG_{{{t},{i}}} has zero starting accuracy"
            )));
        }
        let mut min = f64::INFINITY;
        for epoch in 1..=self.epochs_per_task {
            min = min.min(self.require(kind, mode, t, epoch, i)?);
        }
        Ok((start - min) / start)
    }

    /// Unweighted mean of `SG_{t,i}` over every valid pair `i < t` up to the
    /// last completed task. Zero-start pairs are skipped as missing.
    pub fn aggregate_sg(&self, kind: ClassifierKind, mode: EvalModeKind) -> Result<f64> {
        let last = self.max_train_task(kind, mode);
        if last < 2 {
            return Err(Error::UndefinedMetric(
                "aggregate SG needs at least two completed tasks".into(),
            ));
        }
        let mut sum = 0.0;
        let mut count = 0usize;
        for t in 2..=last {
            for i in 1..t {
                match self.stability_gap(kind, mode, t, i) {
                    Ok(v) => {
                        sum += v;
                        count += 1;
                    }
                    Err(Error::UndefinedMetric(_)) => {}
                    Err(e) => return Err(e),
                }
            }
        }
        if count == 0 {
            return Err(Error::UndefinedMetric("no valid SG pairs".into()));
        }
        Ok(sum / count as f64)
    }

    /// Every `SG_{t,i}` pair up to the last completed task; zero-start pairs
    /// are reported as `None`.
    pub fn sg_breakdown(
        &self,
        kind: ClassifierKind,
        mode: EvalModeKind,
    ) -> Result<Vec<SgPair>> {
        let last = self.max_train_task(kind, mode);
        let mut pairs = Vec::new();
        for t in 2..=last {
            for i in 1..t {
                let value = match self.stability_gap(kind, mode, t, i) {
                    Ok(v) => Some(v),
                    Err(Error::UndefinedMetric(_)) => None,
                    Err(e) => return Err(e),
                };
                pairs.push(SgPair {
                    later_task: t,
                    earlier_task: i,
                    value,
                });
            }
        }
        Ok(pairs)
    }
}

/// One stability-gap pair; `value` is `None` when the starting accuracy was 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SgPair {
    pub later_task: usize,
    pub earlier_task: usize,
    pub value: Option<f64>,
}

/// Task-level confusion: counts of true task vs predicted task, with a
/// row-normalized companion.
#[derive(Debug, Clone)]
pub struct TaskConfusionMatrix {
    pub counts: Array2<u64>,
    pub normalized: Array2<f64>,
}

impl TaskConfusionMatrix {
    pub fn num_tasks(&self) -> usize {
        self.counts.nrows()
    }
}

/// Aggregate class predictions into task predictions. `class_to_task` maps
/// every class id to its 0-based task index; rows/columns of the result are
/// tasks `0..num_tasks`.
pub fn task_confusion(
    predictions: &[ClassId],
    labels: &[ClassId],
    class_to_task: &BTreeMap<ClassId, usize>,
) -> Result<TaskConfusionMatrix> {
    if predictions.len() != labels.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} predictions vs {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    if predictions.is_empty() {
        return Err(Error::EmptyInput("confusion over zero samples".into()));
    }
    let num_tasks = class_to_task
        .values()
        .max()
        .map(|&t| t + 1)
        .ok_or_else(|| Error::EmptyInput("empty class-to-task map".into()))?;
    let task_of = |c: ClassId| -> Result<usize> {
        class_to_task.get(&c).copied().ok_or(Error::UnknownClass(c))
    };
    let mut counts = Array2::<u64>::zeros((num_tasks, num_tasks));
    for (&pred, &label) in predictions.iter().zip(labels) {
        counts[(task_of(label)?, task_of(pred)?)] += 1;
    }
    let mut normalized = Array2::<f64>::zeros((num_tasks, num_tasks));
    for (row, count_row) in counts.rows().into_iter().enumerate() {
        let total: u64 = count_row.sum();
        if total > 0 {
            for (col, &c) in count_row.iter().enumerate() {
                normalized[(row, col)] = c as f64 / total as f64;
            }
        }
    }
    Ok(TaskConfusionMatrix { counts, normalized })
}

/// `LTB_t`: mean normalized confusion mass flowing from tasks `1..t` into
/// the latest task `t`. `confusion` must be exactly `t x t`.
pub fn ltb(confusion: &TaskConfusionMatrix, t: usize) -> Result<f64> {
    if t < 2 {
        return Err(Error::UndefinedMetric("LTB needs t >= 2".into()));
    }
    if confusion.num_tasks() != t {
        return Err(Error::ShapeMismatch(format!(
            "confusion is {}x{}, expected {t}x{t}",
            confusion.num_tasks(),
            confusion.num_tasks()
        )));
    }
    let sum: f64 = (0..t - 1).map(|i| confusion.normalized[(i, t - 1)]).sum();
    Ok(sum / (t - 1) as f64)
}

/// Final metric values for one (kind, mode) in one run.
#[derive(Debug, Clone, Serialize)]
pub struct MetricValues {
    pub acc: f64,
    pub min_acc: Option<f64>,
    pub wc_acc: f64,
    pub aggregate_sg: Option<f64>,
    pub final_ltb: Option<f64>,
    pub sg_breakdown: Vec<SgPair>,
}

/// End-of-training metric report across classifier kinds and eval modes.
#[derive(Debug, Clone, Default)]
pub struct MetricReport {
    pub values: BTreeMap<(ClassifierKind, EvalModeKind), MetricValues>,
}
