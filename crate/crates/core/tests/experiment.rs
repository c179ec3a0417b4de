//! Integration tests for the experiment harness: run shapes, determinism,
//! file emission contracts, and the CSV data path.

use std::collections::BTreeMap;

use cl_lab::data::{generate_gaussian_classes, SyntheticSpec};
use cl_lab::harness::{
    emit_csv, emit_plot_data, run_experiment, summarize, write_summary_json, DataConfig,
    ExperimentConfig, PretrainConfig, TrainingMode,
};
use cl_lab::metrics::{ClassifierKind, EvalModeKind};
use cl_lab::nn::SlowLearnerConfig;
use cl_lab::replay::MemoryPolicy;

fn small_spec() -> SyntheticSpec {
    SyntheticSpec {
        num_classes: 6,
        dim: 4,
        samples_per_class_train: 30,
        samples_per_class_test: 10,
        center_scale: 1.0,
        noise_sigma: 0.4,
    }
}

fn small_config() -> ExperimentConfig {
    ExperimentConfig {
        data: DataConfig::Synthetic(small_spec()),
        tasks: 3,
        epochs: 4,
        batch_size: 16,
        lr0: 0.1,
        slow_learner: None,
        memory: MemoryPolicy::FixedTotal(30),
        warmup_epochs: 0,
        mode: TrainingMode::Sequential,
        pretrain: None,
        classifiers: vec![ClassifierKind::Linear, ClassifierKind::Nmc],
        normalize_features: false,
        seeds: vec![1, 2],
        eval_modes: vec![EvalModeKind::TaskAgnostic, EvalModeKind::TaskAware],
        hidden_dims: vec![8, 4],
    }
}

fn log_lines(result: &cl_lab::harness::RunResult) -> Vec<String> {
    result
        .seed_results
        .iter()
        .flat_map(|s| {
            s.log.entries().map(move |e| {
                format!(
                    "{},{},{},{},{},{},{}",
                    s.seed,
                    e.kind.name(),
                    e.mode.name(),
                    e.train_task,
                    e.epoch,
                    e.eval_task,
                    e.accuracy
                )
            })
        })
        .collect()
}

#[test]
fn completed_run_has_the_expected_log_shape() {
    let config = small_config();
    let result = run_experiment(&config).unwrap();
    assert_eq!(result.seed_results.len(), 2);
    // E * T(T+1)/2 entries per (kind, mode).
    let expected = config.epochs * config.tasks * (config.tasks + 1) / 2;
    for seed_result in &result.seed_results {
        for &kind in &config.classifiers {
            for &mode in &config.eval_modes {
                let count = seed_result
                    .log
                    .entries()
                    .filter(|e| e.kind == kind && e.mode == mode)
                    .count();
                assert_eq!(count, expected);
            }
        }
        // LTB series: one point per epoch from task 2 onwards, per kind.
        for &kind in &config.classifiers {
            assert_eq!(
                seed_result.ltb_series[&kind].len(),
                (config.tasks - 1) * config.epochs
            );
        }
        // Final confusion is tasks x tasks.
        assert_eq!(
            seed_result.final_confusion[&ClassifierKind::Linear].num_tasks(),
            config.tasks
        );
    }
}

#[test]
fn run_experiment_is_deterministic() {
    let config = small_config();
    let a = run_experiment(&config).unwrap();
    let b = run_experiment(&config).unwrap();
    assert_eq!(log_lines(&a), log_lines(&b));
}

#[test]
fn joint_mode_with_one_task_matches_sequential() {
    let mut config = small_config();
    config.tasks = 1;
    let sequential = run_experiment(&config).unwrap();
    config.mode = TrainingMode::JointIncremental;
    let joint = run_experiment(&config).unwrap();
    assert_eq!(log_lines(&sequential), log_lines(&joint));
}

#[test]
fn joint_mode_runs_with_many_tasks() {
    let mut config = small_config();
    config.mode = TrainingMode::JointIncremental;
    config.seeds = vec![5];
    let result = run_experiment(&config).unwrap();
    let expected = config.epochs * config.tasks * (config.tasks + 1) / 2;
    let count = result.seed_results[0]
        .log
        .entries()
        .filter(|e| e.kind == ClassifierKind::Nmc && e.mode == EvalModeKind::TaskAgnostic)
        .count();
    assert_eq!(count, expected);
}

#[test]
fn emission_is_deterministic_and_headers_match() {
    let config = small_config();
    let result = run_experiment(&config).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("a");
    let second = dir.path().join("b");
    emit_csv(&result, &first).unwrap();
    emit_csv(&result, &second).unwrap();

    for name in ["accuracy_log.csv", "metrics.csv", "confusion.csv", "ltb.csv"] {
        let a = std::fs::read(first.join(name)).unwrap();
        let b = std::fs::read(second.join(name)).unwrap();
        assert_eq!(a, b, "{name} differs between emissions");
    }

    let log = std::fs::read_to_string(first.join("accuracy_log.csv")).unwrap();
    assert!(log.starts_with("seed,kind,mode,train_task,epoch,eval_task,accuracy\n"));
    let metrics = std::fs::read_to_string(first.join("metrics.csv")).unwrap();
    assert!(metrics.starts_with("seed,kind,mode,wc_acc,min_acc,sg,acc\n"));
    // 2 seeds x 2 kinds x 2 modes -> 8 data rows.
    assert_eq!(metrics.lines().count(), 1 + 8);
}

#[test]
fn plot_data_has_the_expected_shape() {
    let mut config = small_config();
    config.seeds = vec![7];
    let result = run_experiment(&config).unwrap();
    let dir = tempfile::tempdir().unwrap();
    emit_plot_data(&result, dir.path()).unwrap();

    let task1 = std::fs::read_to_string(
        dir.path()
            .join("plots/linear_task_agnostic/task1_accuracy.csv"),
    )
    .unwrap();
    // Header plus one point per (task, epoch).
    assert_eq!(task1.lines().count(), 1 + config.tasks * config.epochs);

    // With a single seed the curve equals the raw logged series.
    let log = &result.seed_results[0].log;
    for (idx, line) in task1.lines().skip(1).enumerate() {
        let (t, n) = (idx / config.epochs + 1, idx % config.epochs + 1);
        let mut fields = line.split(',');
        let global: usize = fields.next().unwrap().parse().unwrap();
        let acc: f64 = fields.next().unwrap().parse().unwrap();
        assert_eq!(global, (t - 1) * config.epochs + n);
        let expected = log
            .get(ClassifierKind::Linear, EvalModeKind::TaskAgnostic, t, n, 1)
            .unwrap();
        assert_eq!(acc, expected);
    }

    // The latest-task-bias curve exists for the agnostic mode only.
    assert!(dir
        .path()
        .join("plots/linear_task_agnostic/ltb_curve.csv")
        .exists());
    assert!(!dir
        .path()
        .join("plots/linear_task_aware/ltb_curve.csv")
        .exists());
}

#[test]
fn summary_json_mirrors_the_metric_report() {
    let config = small_config();
    let result = run_experiment(&config).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_summary_json(&result, dir.path()).unwrap();
    let text = std::fs::read_to_string(dir.path().join("summary.json")).unwrap();
    let parsed: serde_json::Value = serde_json::from_str(&text).unwrap();
    let rows = parsed["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 4); // 2 kinds x 2 modes

    let summary = summarize(&result).unwrap();
    let first = &summary.rows[0];
    assert_eq!(rows[0]["kind"], first.kind.name());
    let acc_mean = rows[0]["acc"]["mean"].as_f64().unwrap();
    assert!((acc_mean - first.acc.mean).abs() < 1e-15);
}

/// The [DERIVED] round-trip oracle: recompute every metric from the emitted
/// accuracy_log.csv, exactly as an external script would, and compare with
/// the emitted metrics.csv.
#[test]
fn metrics_csv_matches_recomputation_from_accuracy_log_csv() {
    let config = small_config();
    let result = run_experiment(&config).unwrap();
    let dir = tempfile::tempdir().unwrap();
    emit_csv(&result, dir.path()).unwrap();

    type Key = (u64, String, String);
    let mut raw: BTreeMap<Key, Vec<(usize, usize, usize, f64)>> = BTreeMap::new();
    let log_text = std::fs::read_to_string(dir.path().join("accuracy_log.csv")).unwrap();
    for line in log_text.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        raw.entry((f[0].parse().unwrap(), f[1].into(), f[2].into()))
            .or_default()
            .push((
                f[3].parse().unwrap(),
                f[4].parse().unwrap(),
                f[5].parse().unwrap(),
                f[6].parse().unwrap(),
            ));
    }

    let epochs = config.epochs;
    let tasks = config.tasks;
    let acc_at = |entries: &[(usize, usize, usize, f64)], t: usize, n: usize, i: usize| -> f64 {
        entries
            .iter()
            .find(|&&(et, en, ei, _)| (et, en, ei) == (t, n, i))
            .unwrap()
            .3
    };

    let metrics_text = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    let mut checked = 0;
    for line in metrics_text.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        let entries = &raw[&(f[0].parse().unwrap(), f[1].to_string(), f[2].to_string())];

        let acc_expected: f64 =
            (1..=tasks).map(|i| acc_at(entries, tasks, epochs, i)).sum::<f64>() / tasks as f64;
        let min_expected: f64 = (1..tasks)
            .map(|i| {
                ((i + 1)..=tasks)
                    .flat_map(|n| (1..=epochs).map(move |e| acc_at(entries, n, e, i)))
                    .fold(f64::INFINITY, f64::min)
            })
            .sum::<f64>()
            / (tasks - 1) as f64;
        let wc_expected = acc_at(entries, tasks, epochs, tasks) / tasks as f64
            + (1.0 - 1.0 / tasks as f64) * min_expected;
        let mut sg_values = Vec::new();
        for t in 2..=tasks {
            for i in 1..t {
                let start = acc_at(entries, t - 1, epochs, i);
                if start > 0.0 {
                    let min = (1..=epochs)
                        .map(|n| acc_at(entries, t, n, i))
                        .fold(f64::INFINITY, f64::min);
                    sg_values.push((start - min) / start);
                }
            }
        }
        let sg_expected = sg_values.iter().sum::<f64>() / sg_values.len() as f64;

        let wc: f64 = f[3].parse().unwrap();
        let min: f64 = f[4].parse().unwrap();
        let sg: f64 = f[5].parse().unwrap();
        let acc: f64 = f[6].parse().unwrap();
        assert!((wc - wc_expected).abs() < 1e-12);
        assert!((min - min_expected).abs() < 1e-12);
        assert!((sg - sg_expected).abs() < 1e-12);
        assert!((acc - acc_expected).abs() < 1e-12);
        checked += 1;
    }
    assert_eq!(checked, 8);
}

#[test]
fn csv_datasets_drive_a_full_run() {
    let (train, test) = generate_gaussian_classes(&small_spec(), 3).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let write = |name: &str, d: &cl_lab::data::LabeledDataset| {
        let mut text = String::new();
        for (row, &label) in d.labels.iter().enumerate() {
            let features: Vec<String> =
                d.inputs.row(row).iter().map(|v| v.to_string()).collect();
            text.push_str(&format!("{},{}\n", features.join(","), label));
        }
        let path = dir.path().join(name);
        std::fs::write(&path, text).unwrap();
        path
    };
    let train_path = write("train.csv", &train);
    let test_path = write("test.csv", &test);

    let mut config = small_config();
    config.data = DataConfig::Csv {
        train: train_path,
        test: test_path,
    };
    config.seeds = vec![1];
    let result = run_experiment(&config).unwrap();
    let expected = config.epochs * config.tasks * (config.tasks + 1) / 2;
    let count = result.seed_results[0]
        .log
        .entries()
        .filter(|e| e.kind == ClassifierKind::Linear && e.mode == EvalModeKind::TaskAgnostic)
        .count();
    assert_eq!(count, expected);
}

#[test]
fn pretraining_changes_the_trajectory() {
    let mut config = small_config();
    config.seeds = vec![4];
    let plain = run_experiment(&config).unwrap();
    config.pretrain = Some(PretrainConfig {
        base_classes: 3,
        epochs: 5,
    });
    let pretrained = run_experiment(&config).unwrap();
    assert_ne!(log_lines(&plain), log_lines(&pretrained));
}

#[test]
fn slow_learner_and_warmup_paths_run() {
    let mut config = small_config();
    config.seeds = vec![9];
    config.slow_learner = Some(SlowLearnerConfig {
        backbone_lr: 0.01,
        head_lr: 0.1,
    });
    config.warmup_epochs = 2;
    let result = run_experiment(&config).unwrap();
    let report = &result.seed_results[0].report.values
        [&(ClassifierKind::Nmc, EvalModeKind::TaskAgnostic)];
    assert!(report.acc > 0.0);
    assert!(report.aggregate_sg.is_some());
    assert_eq!(
        report.sg_breakdown.len(),
        3 // pairs (2,1), (3,1), (3,2)
    );
}
