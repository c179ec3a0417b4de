//! Experiment execution: per-seed training loops with per-epoch evaluation
//! of every configured classifier kind over one shared model snapshot.

use std::collections::BTreeMap;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::classify::{
    compute_oracle_prototypes, compute_prototypes, linear_predict_from_logits,
    nmc_predict_features, EvalMode, PrototypeSet,
};
use crate::data::{
    generate_gaussian_classes, load_csv_dataset, split_class_incremental, standardize,
    LabeledDataset, TaskStream,
};
use crate::error::{Error, Result};
use crate::harness::config::{DataConfig, ExperimentConfig, TrainingMode};
use crate::metrics::{
    ltb, task_confusion, AccuracyLog, ClassifierKind, EvalModeKind, MetricReport, MetricValues,
    TaskConfusionMatrix,
};
use crate::nn::{LrSchedule, Model};
use crate::replay::MemoryBuffer;
use crate::ClassId;

// Sub-stream tags for deriving independent seeds from the run seed.
const TAG_DATA: u64 = 1;
const TAG_SPLIT: u64 = 2;
const TAG_INIT: u64 = 3;
const TAG_PRETRAIN_DATA: u64 = 4;
const TAG_PRETRAIN_HEAD: u64 = 5;
const TAG_PRETRAIN_SHUFFLE: u64 = 6;
const TAG_HEAD: u64 = 7;
const TAG_BUFFER: u64 = 8;
const TAG_SHUFFLE: u64 = 9;
const TAG_WARMUP_SHUFFLE: u64 = 10;

fn mix(mut z: u64) -> u64 {
    // splitmix64 finalizer
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic seed for one sub-stream of a run.
fn derive_seed(root: u64, tags: &[u64]) -> u64 {
    let mut state = mix(root ^ 0x6A09_E667_F3BC_C909);
    for &t in tags {
        state = mix(state.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_add(t));
    }
    state
}

/// One latest-task-bias sample along the training trajectory.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct LtbPoint {
    pub train_task: usize,
    pub epoch: usize,
    pub value: f64,
}

/// Everything recorded for one seed.
#[derive(Debug)]
pub struct SeedResult {
    pub seed: u64,
    pub log: AccuracyLog,
    pub report: MetricReport,
    /// Task confusion at the final epoch of the final task, per kind,
    /// from task-agnostic predictions.
    pub final_confusion: BTreeMap<ClassifierKind, TaskConfusionMatrix>,
    /// Per-epoch latest-task bias (defined from the second task on), per kind.
    pub ltb_series: BTreeMap<ClassifierKind, Vec<LtbPoint>>,
}

/// Result of a full experiment over all configured seeds.
#[derive(Debug)]
pub struct RunResult {
    pub config: ExperimentConfig,
    pub seed_results: Vec<SeedResult>,
}

/// Run the configured experiment for every seed, sequentially.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunResult> {
    config.validate()?;
    let mut seed_results = Vec::with_capacity(config.seeds.len());
    for &seed in &config.seeds {
        seed_results.push(run_single_seed(config, seed)?);
    }
    Ok(RunResult {
        config: config.clone(),
        seed_results,
    })
}

fn build_task_stream(config: &ExperimentConfig, seed: u64) -> Result<TaskStream> {
    let (train, test) = match &config.data {
        DataConfig::Synthetic(spec) => {
            generate_gaussian_classes(spec, derive_seed(seed, &[TAG_DATA]))?
        }
        DataConfig::Csv { train, test } => (load_csv_dataset(train)?, load_csv_dataset(test)?),
    };
    let (train, test) = standardize(&train, &test)?;
    split_class_incremental(&train, &test, config.tasks, derive_seed(seed, &[TAG_SPLIT]))
}

/// Train the backbone on a disjoint base class set, then drop the head.
fn pretrain_backbone(model: &mut Model, config: &ExperimentConfig, seed: u64) -> Result<()> {
    let Some(pretrain) = &config.pretrain else {
        return Ok(());
    };
    let DataConfig::Synthetic(spec) = &config.data else {
        unreachable!("validated: pretraining requires synthetic data");
    };
    let base_spec = crate::data::SyntheticSpec {
        num_classes: pretrain.base_classes,
        ..*spec
    };
    let (base_train, base_test) =
        generate_gaussian_classes(&base_spec, derive_seed(seed, &[TAG_PRETRAIN_DATA]))?;
    let (base_train, _) = standardize(&base_train, &base_test)?;
    // Shift ids past the task classes so the base set stays disjoint.
    let base_train = base_train.offset_labels(spec.num_classes);

    let base_ids: Vec<ClassId> = base_train.class_set.iter().copied().collect();
    model.add_head(&base_ids, derive_seed(seed, &[TAG_PRETRAIN_HEAD]))?;
    let schedule = LrSchedule::new(config.lr0, pretrain.epochs)?;
    for epoch in 0..pretrain.epochs {
        let lr = schedule.lr_at(epoch)?;
        train_epoch(
            model,
            &base_train,
            config.batch_size,
            lr,
            lr,
            derive_seed(seed, &[TAG_PRETRAIN_SHUFFLE, epoch as u64]),
        )?;
    }
    model.heads.clear();
    Ok(())
}

/// Head warm-up at a task boundary: the backbone is frozen and only the new
/// heads train, for `warmup_epochs` epochs that are excluded from the log.
fn run_warmup(
    model: &mut Model,
    pool: &LabeledDataset,
    config: &ExperimentConfig,
    head_lr0: f64,
    seed: u64,
    t: usize,
) -> Result<()> {
    if config.warmup_epochs == 0 {
        return Ok(());
    }
    let schedule = LrSchedule::new(head_lr0, config.warmup_epochs)?;
    model.backbone.trainable = false;
    for epoch in 0..config.warmup_epochs {
        let lr = schedule.lr_at(epoch)?;
        train_epoch(
            model,
            pool,
            config.batch_size,
            0.0,
            lr,
            derive_seed(seed, &[TAG_WARMUP_SHUFFLE, t as u64, epoch as u64]),
        )?;
    }
    model.backbone.trainable = true;
    Ok(())
}

/// One pass over the pool in shuffled mini-batches.
fn train_epoch(
    model: &mut Model,
    pool: &LabeledDataset,
    batch_size: usize,
    lr_backbone: f64,
    lr_heads: f64,
    shuffle_seed: u64,
) -> Result<()> {
    let mut order: Vec<usize> = (0..pool.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(shuffle_seed);
    order.shuffle(&mut rng);
    for chunk in order.chunks(batch_size) {
        let batch = pool.inputs.select(Axis(0), chunk);
        let labels: Vec<ClassId> = chunk.iter().map(|&i| pool.labels[i]).collect();
        let (_, grads) = model.loss_and_grads(&batch, &labels)?;
        model.sgd_step(&grads, lr_backbone, lr_heads)?;
    }
    Ok(())
}

fn run_single_seed(config: &ExperimentConfig, seed: u64) -> Result<SeedResult> {
    let stream = build_task_stream(config, seed)?;
    let input_dim = stream.tasks[0].train.dim();
    let mut layer_dims = vec![input_dim];
    layer_dims.extend_from_slice(&config.hidden_dims);
    let mut model = Model::init_network(&layer_dims, derive_seed(seed, &[TAG_INIT]))?;
    pretrain_backbone(&mut model, config, seed)?;

    let mut buffer = MemoryBuffer::new(config.memory)?;
    let mut log = AccuracyLog::new(config.epochs)?;
    let mut ltb_series: BTreeMap<ClassifierKind, Vec<LtbPoint>> = config
        .classifiers
        .iter()
        .map(|&k| (k, Vec::new()))
        .collect();
    let mut final_confusion: BTreeMap<ClassifierKind, TaskConfusionMatrix> = BTreeMap::new();

    let (backbone_lr0, head_lr0) = match &config.slow_learner {
        Some(sl) => (sl.backbone_lr, sl.head_lr),
        None => (config.lr0, config.lr0),
    };
    let backbone_schedule = LrSchedule::new(backbone_lr0, config.epochs)?;
    let head_schedule = LrSchedule::new(head_lr0, config.epochs)?;

    for (task_idx, task) in stream.tasks.iter().enumerate() {
        let t = task_idx + 1;
        model.add_head(&task.class_ids, derive_seed(seed, &[TAG_HEAD, t as u64]))?;

        let pool = match config.mode {
            TrainingMode::Sequential => buffer.training_pool(&task.train)?,
            TrainingMode::JointIncremental => {
                let parts: Vec<&LabeledDataset> =
                    stream.tasks[..=task_idx].iter().map(|t| &t.train).collect();
                LabeledDataset::concat(&parts)?
            }
        };

        run_warmup(&mut model, &pool, config, head_lr0, seed, t)?;

        for epoch in 0..config.epochs {
            train_epoch(
                &mut model,
                &pool,
                config.batch_size,
                backbone_schedule.lr_at(epoch)?,
                head_schedule.lr_at(epoch)?,
                derive_seed(seed, &[TAG_SHUFFLE, t as u64, epoch as u64]),
            )?;
            evaluate_epoch(
                config,
                &model,
                &stream,
                &buffer,
                task_idx,
                epoch + 1,
                &mut log,
                &mut ltb_series,
                &mut final_confusion,
            )?;
        }

        buffer.update_after_task(&task.train, derive_seed(seed, &[TAG_BUFFER, t as u64]))?;
    }

    let report = build_report(config, &log, &final_confusion, stream.num_tasks())?;
    Ok(SeedResult {
        seed,
        log,
        report,
        final_confusion,
        ltb_series,
    })
}

/// Evaluate every configured classifier kind and eval mode on the test sets
/// of all tasks seen so far, from one frozen model snapshot.
#[allow(clippy::too_many_arguments)]
fn evaluate_epoch(
    config: &ExperimentConfig,
    model: &Model,
    stream: &TaskStream,
    buffer: &MemoryBuffer,
    task_idx: usize,
    epoch: usize,
    log: &mut AccuracyLog,
    ltb_series: &mut BTreeMap<ClassifierKind, Vec<LtbPoint>>,
    final_confusion: &mut BTreeMap<ClassifierKind, TaskConfusionMatrix>,
) -> Result<()> {
    let t = task_idx + 1;
    let current_train = &stream.tasks[task_idx].train;

    // One feature pass per eval set, shared by all classifier kinds.
    let features: Vec<Array2<f64>> = stream.tasks[..=task_idx]
        .iter()
        .map(|task| model.forward_features(&task.test.inputs))
        .collect::<Result<_>>()?;

    let wants = |kind: ClassifierKind| config.classifiers.contains(&kind);
    let exemplar_protos = if wants(ClassifierKind::Nmc) {
        Some(compute_prototypes(
            &model.backbone,
            buffer,
            current_train,
            config.normalize_features,
        )?)
    } else {
        None
    };
    let oracle_protos = if wants(ClassifierKind::OracleNmc) {
        let history: Vec<&LabeledDataset> = stream.tasks[..task_idx]
            .iter()
            .map(|task| &task.train)
            .collect();
        Some(compute_oracle_prototypes(
            &model.backbone,
            &history,
            current_train,
            config.normalize_features,
        )?)
    } else {
        None
    };

    // Class-to-task map over the tasks seen so far (confusion is t x t).
    let seen_map: BTreeMap<ClassId, usize> = stream.tasks[..=task_idx]
        .iter()
        .enumerate()
        .flat_map(|(idx, task)| task.class_ids.iter().map(move |&c| (c, idx)))
        .collect();

    for &kind in &config.classifiers {
        let protos = match kind {
            ClassifierKind::Linear => None,
            ClassifierKind::Nmc => exemplar_protos.as_ref(),
            ClassifierKind::OracleNmc => oracle_protos.as_ref(),
        };

        let mut pooled_preds: Vec<ClassId> = Vec::new();
        let mut pooled_labels: Vec<ClassId> = Vec::new();
        for (i, (task, feats)) in stream.tasks[..=task_idx].iter().zip(&features).enumerate() {
            let test = &task.test;
            let agnostic = predict(model, protos, feats, EvalMode::TaskAgnostic)?;
            if config.eval_modes.contains(&EvalModeKind::TaskAgnostic) {
                let acc = crate::classify::accuracy(&agnostic, &test.labels)?;
                log.record(kind, EvalModeKind::TaskAgnostic, t, epoch, i + 1, acc)?;
            }
            if config.eval_modes.contains(&EvalModeKind::TaskAware) {
                let aware = predict(model, protos, feats, EvalMode::TaskAware(i))?;
                let acc = crate::classify::accuracy(&aware, &test.labels)?;
                log.record(kind, EvalModeKind::TaskAware, t, epoch, i + 1, acc)?;
            }
            pooled_preds.extend_from_slice(&agnostic);
            pooled_labels.extend_from_slice(&test.labels);
        }

        let confusion = task_confusion(&pooled_preds, &pooled_labels, &seen_map)?;
        if t >= 2 {
            ltb_series.get_mut(&kind).unwrap().push(LtbPoint {
                train_task: t,
                epoch,
                value: ltb(&confusion, t)?,
            });
        }
        final_confusion.insert(kind, confusion);
    }
    Ok(())
}

/// Dispatch one prediction over precomputed features.
fn predict(
    model: &Model,
    protos: Option<&PrototypeSet>,
    features: &Array2<f64>,
    mode: EvalMode,
) -> Result<Vec<ClassId>> {
    match protos {
        None => {
            let logits = model.logits_from_features(features)?;
            linear_predict_from_logits(model, &logits, mode)
        }
        Some(protos) => {
            let candidates = crate::classify::nmc_candidates(model, protos, mode)?;
            nmc_predict_features(protos, features, &candidates)
        }
    }
}

fn build_report(
    config: &ExperimentConfig,
    log: &AccuracyLog,
    final_confusion: &BTreeMap<ClassifierKind, TaskConfusionMatrix>,
    num_tasks: usize,
) -> Result<MetricReport> {
    let mut report = MetricReport::default();
    for &kind in &config.classifiers {
        for &mode in &config.eval_modes {
            let acc = log.avg_accuracy(kind, mode, num_tasks)?;
            let wc_acc = log.wc_acc(kind, mode, num_tasks, config.epochs)?;
            let min_acc = if num_tasks >= 2 {
                Some(log.min_acc(kind, mode, num_tasks)?)
            } else {
                None
            };
            let aggregate_sg = if num_tasks >= 2 {
                match log.aggregate_sg(kind, mode) {
                    Ok(v) => Some(v),
                    Err(Error::UndefinedMetric(_)) => None,
                    Err(e) => return Err(e),
                }
            } else {
                None
            };
            let final_ltb = if mode == EvalModeKind::TaskAgnostic && num_tasks >= 2 {
                Some(ltb(&final_confusion[&kind], num_tasks)?)
            } else {
                None
            };
            report.values.insert(
                (kind, mode),
                MetricValues {
                    acc,
                    min_acc,
                    wc_acc,
                    aggregate_sg,
                    final_ltb,
                    sg_breakdown: log.sg_breakdown(kind, mode)?,
                },
            );
        }
    }
    Ok(report)
}

/// Mean and sample standard deviation (0 for a single value).
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct Stat {
    pub mean: f64,
    pub stddev: f64,
}

impl Stat {
    pub fn from_values(values: &[f64]) -> Stat {
        let n = values.len();
        assert!(n > 0, "stat over no values");
        let mean = values.iter().sum::<f64>() / n as f64;
        let stddev = if n < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64).sqrt()
        };
        Stat { mean, stddev }
    }
}

/// Cross-seed summary for one (kind, mode).
#[derive(Debug, Clone, serde::Serialize)]
pub struct SummaryRow {
    pub kind: ClassifierKind,
    pub mode: EvalModeKind,
    pub wc_acc: Stat,
    pub min_acc: Option<Stat>,
    pub sg: Option<Stat>,
    pub acc: Stat,
    pub final_ltb: Option<Stat>,
}

/// Cross-seed summary table.
#[derive(Debug, Clone, serde::Serialize)]
pub struct Summary {
    pub seeds: Vec<u64>,
    pub rows: Vec<SummaryRow>,
}

/// Mean and sample stddev, over seeds, of every end-of-training metric.
pub fn summarize(result: &RunResult) -> Result<Summary> {
    if result.seed_results.is_empty() {
        return Err(Error::EmptyInput("no completed seeds".into()));
    }
    let mut rows = Vec::new();
    for &kind in &result.config.classifiers {
        for &mode in &result.config.eval_modes {
            let values: Vec<&MetricValues> = result
                .seed_results
                .iter()
                .map(|s| &s.report.values[&(kind, mode)])
                .collect();
            let collect_opt = |get: fn(&MetricValues) -> Option<f64>| -> Option<Stat> {
                let picked: Vec<f64> = values.iter().filter_map(|v| get(v)).collect();
                (picked.len() == values.len()).then(|| Stat::from_values(&picked))
            };
            rows.push(SummaryRow {
                kind,
                mode,
                wc_acc: Stat::from_values(
                    &values.iter().map(|v| v.wc_acc).collect::<Vec<_>>(),
                ),
                min_acc: collect_opt(|v| v.min_acc),
                sg: collect_opt(|v| v.aggregate_sg),
                acc: Stat::from_values(&values.iter().map(|v| v.acc).collect::<Vec<_>>()),
                final_ltb: collect_opt(|v| v.final_ltb),
            });
        }
    }
    Ok(Summary {
        seeds: result.config.seeds.clone(),
        rows,
    })
}
