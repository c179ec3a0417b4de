//! Dataset generation, CSV ingestion, normalization, and class-incremental
//! task splitting.

use std::collections::BTreeSet;
use std::path::Path;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ClassId;

/// Rows of inputs with one class label per row.
#[derive(Debug, Clone)]
pub struct LabeledDataset {
    pub inputs: Array2<f64>,
    pub labels: Vec<ClassId>,
    pub class_set: BTreeSet<ClassId>,
}

impl LabeledDataset {
    pub fn new(inputs: Array2<f64>, labels: Vec<ClassId>) -> Result<Self> {
        if inputs.nrows() == 0 {
            return Err(Error::EmptyInput("dataset with zero rows".into()));
        }
        if inputs.nrows() != labels.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} rows but {} labels",
                inputs.nrows(),
                labels.len()
            )));
        }
        let class_set = labels.iter().copied().collect();
        Ok(LabeledDataset {
            inputs,
            labels,
            class_set,
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.inputs.ncols()
    }

    /// Row indices carrying `class`, in dataset order.
    pub fn rows_of_class(&self, class: ClassId) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, &c)| c == class)
            .map(|(i, _)| i)
            .collect()
    }

    /// Copy of the rows at `indices`, keeping their order.
    pub fn select_rows(&self, indices: &[usize]) -> Result<LabeledDataset> {
        if indices.is_empty() {
            return Err(Error::EmptyInput("row selection is empty".into()));
        }
        let inputs = self.inputs.select(Axis(0), indices);
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        LabeledDataset::new(inputs, labels)
    }

    /// Same inputs with every label shifted by `delta`. Used to keep
    /// pretraining base classes disjoint from task classes.
    pub fn offset_labels(&self, delta: usize) -> LabeledDataset {
        let labels: Vec<ClassId> = self.labels.iter().map(|&c| c + delta).collect();
        let class_set = labels.iter().copied().collect();
        LabeledDataset {
            inputs: self.inputs.clone(),
            labels,
            class_set,
        }
    }

    /// Concatenate datasets row-wise, in order.
    pub fn concat(parts: &[&LabeledDataset]) -> Result<LabeledDataset> {
        let nonempty: Vec<_> = parts.iter().filter(|d| !d.is_empty()).collect();
        if nonempty.is_empty() {
            return Err(Error::EmptyInput("concatenation of empty datasets".into()));
        }
        let dim = nonempty[0].dim();
        if nonempty.iter().any(|d| d.dim() != dim) {
            return Err(Error::ShapeMismatch(
                "datasets with differing input dimensions".into(),
            ));
        }
        let total: usize = nonempty.iter().map(|d| d.len()).sum();
        let mut inputs = Array2::zeros((total, dim));
        let mut labels = Vec::with_capacity(total);
        let mut row = 0;
        for d in nonempty {
            inputs
                .slice_mut(ndarray::s![row..row + d.len(), ..])
                .assign(&d.inputs);
            labels.extend_from_slice(&d.labels);
            row += d.len();
        }
        LabeledDataset::new(inputs, labels)
    }
}

/// Recipe for a synthetic Gaussian-cluster classification dataset.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub num_classes: usize,
    pub dim: usize,
    pub samples_per_class_train: usize,
    pub samples_per_class_test: usize,
    /// Class centers are drawn uniformly from `[-center_scale, center_scale]^dim`.
    pub center_scale: f64,
    /// Isotropic Gaussian noise around the center. Zero collapses every
    /// sample of a class onto its center.
    pub noise_sigma: f64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes == 0
            || self.dim == 0
            || self.samples_per_class_train == 0
            || self.samples_per_class_test == 0
            || self.center_scale <= 0.0
            || self.center_scale.is_nan()
            || self.noise_sigma < 0.0
            || self.noise_sigma.is_nan()
        {
            return Err(Error::InvalidConfig(format!(
                "invalid synthetic spec: {self:?}"
            )));
        }
        Ok(())
    }
}

/// One class-incremental task: train/test splits over a disjoint class group.
#[derive(Debug, Clone)]
pub struct Task {
    pub train: LabeledDataset,
    pub test: LabeledDataset,
    /// Classes of this task, in split order.
    pub class_ids: Vec<ClassId>,
}

/// Ordered sequence of disjoint tasks.
#[derive(Debug, Clone)]
pub struct TaskStream {
    pub tasks: Vec<Task>,
}

impl TaskStream {
    pub fn num_tasks(&self) -> usize {
        self.tasks.len()
    }

    /// Map from class id to 0-based task index.
    pub fn class_to_task(&self) -> std::collections::BTreeMap<ClassId, usize> {
        self.tasks
            .iter()
            .enumerate()
            .flat_map(|(t, task)| task.class_ids.iter().map(move |&c| (c, t)))
            .collect()
    }
}

/// Draw one Gaussian cluster per class: a uniform random center plus
/// isotropic noise. Train and test samples are independent draws.
/// Class labels are `0..num_classes`.
pub fn generate_gaussian_classes(
    spec: &SyntheticSpec,
    seed: u64,
) -> Result<(LabeledDataset, LabeledDataset)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = StandardNormal;

    let n_train = spec.num_classes * spec.samples_per_class_train;
    let n_test = spec.num_classes * spec.samples_per_class_test;
    let mut train = Array2::zeros((n_train, spec.dim));
    let mut test = Array2::zeros((n_test, spec.dim));
    let mut train_labels = Vec::with_capacity(n_train);
    let mut test_labels = Vec::with_capacity(n_test);

    for class in 0..spec.num_classes {
        let center: Vec<f64> = (0..spec.dim)
            .map(|_| rng.random_range(-spec.center_scale..=spec.center_scale))
            .collect();
        for s in 0..spec.samples_per_class_train {
            let row = class * spec.samples_per_class_train + s;
            for (d, &c) in center.iter().enumerate() {
                let z: f64 = normal.sample(&mut rng);
                train[(row, d)] = c + spec.noise_sigma * z;
            }
            train_labels.push(class);
        }
        for s in 0..spec.samples_per_class_test {
            let row = class * spec.samples_per_class_test + s;
            for (d, &c) in center.iter().enumerate() {
                let z: f64 = normal.sample(&mut rng);
                test[(row, d)] = c + spec.noise_sigma * z;
            }
            test_labels.push(class);
        }
    }

    Ok((
        LabeledDataset::new(train, train_labels)?,
        LabeledDataset::new(test, test_labels)?,
    ))
}

/// Shuffle the full class set with `class_order_seed`, chunk it into
/// `num_tasks` equal groups, and filter train/test rows per group.
pub fn split_class_incremental(
    train: &LabeledDataset,
    test: &LabeledDataset,
    num_tasks: usize,
    class_order_seed: u64,
) -> Result<TaskStream> {
    if num_tasks == 0 {
        return Err(Error::InvalidConfig("num_tasks must be positive".into()));
    }
    if train.class_set != test.class_set {
        return Err(Error::InvalidConfig(
            "train and test must cover the same classes".into(),
        ));
    }
    let num_classes = train.class_set.len();
    if !num_classes.is_multiple_of(num_tasks) {
        return Err(Error::InvalidConfig(format!(
            "{num_classes} classes are not divisible into {num_tasks} equal tasks"
        )));
    }

    let mut order: Vec<ClassId> = train.class_set.iter().copied().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(class_order_seed);
    order.shuffle(&mut rng);

    let per_task = num_classes / num_tasks;
    let mut tasks = Vec::with_capacity(num_tasks);
    for group in order.chunks(per_task) {
        let members: BTreeSet<ClassId> = group.iter().copied().collect();
        let pick = |d: &LabeledDataset| -> Result<LabeledDataset> {
            let rows: Vec<usize> = d
                .labels
                .iter()
                .enumerate()
                .filter(|(_, c)| members.contains(c))
                .map(|(i, _)| i)
                .collect();
            d.select_rows(&rows)
        };
        tasks.push(Task {
            train: pick(train)?,
            test: pick(test)?,
            class_ids: group.to_vec(),
        });
    }
    Ok(TaskStream { tasks })
}

/// Load a header-less CSV of real feature columns followed by one integer
/// class-id column.
pub fn load_csv_dataset(path: impl AsRef<Path>) -> Result<LabeledDataset> {
    let text = std::fs::read_to_string(path.as_ref())?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut labels: Vec<ClassId> = Vec::new();
    let mut dim = None;

    for (idx, line) in text.lines().enumerate() {
        let row = idx + 1;
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() < 2 || fields.iter().any(|f| f.is_empty()) {
            return Err(Error::CsvParse {
                row,
                msg: format!("expected at least one feature and a label, got {line:?}"),
            });
        }
        let d = fields.len() - 1;
        match dim {
            None => dim = Some(d),
            Some(expected) if expected != d => {
                return Err(Error::CsvParse {
                    row,
                    msg: format!("{d} feature columns, previous rows had {expected}"),
                });
            }
            _ => {}
        }
        let mut values = Vec::with_capacity(d);
        for f in &fields[..d] {
            values.push(f.parse::<f64>().map_err(|_| Error::CsvParse {
                row,
                msg: format!("non-numeric feature cell {f:?}"),
            })?);
        }
        let label: i64 = fields[d].parse().map_err(|_| Error::CsvParse {
            row,
            msg: format!("non-integer label cell {:?}", fields[d]),
        })?;
        if label < 0 {
            return Err(Error::CsvParse {
                row,
                msg: format!("negative class id {label}"),
            });
        }
        rows.push(values);
        labels.push(label as ClassId);
    }

    let dim = dim.ok_or_else(|| Error::EmptyInput("empty CSV file".into()))?;
    let mut inputs = Array2::zeros((rows.len(), dim));
    for (i, row) in rows.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            inputs[(i, j)] = v;
        }
    }
    LabeledDataset::new(inputs, labels)
}

/// Shift and scale every dimension to zero mean and unit variance, with the
/// statistics fitted on the training set only. Zero-variance dimensions map
/// to zero.
pub fn standardize(
    train: &LabeledDataset,
    test: &LabeledDataset,
) -> Result<(LabeledDataset, LabeledDataset)> {
    if train.dim() != test.dim() {
        return Err(Error::ShapeMismatch(
            "train and test dimensions differ".into(),
        ));
    }
    let n = train.len() as f64;
    let mean = train.inputs.sum_axis(Axis(0)) / n;
    let mut std = train
        .inputs
        .rows()
        .into_iter()
        .fold(ndarray::Array1::<f64>::zeros(train.dim()), |acc, row| {
            acc + (&row - &mean).mapv(|v| v * v)
        })
        / n;
    std.mapv_inplace(f64::sqrt);

    let apply = |d: &LabeledDataset| -> Result<LabeledDataset> {
        let mut out = d.inputs.clone();
        for mut row in out.rows_mut() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = if std[j] < 1e-12 {
                    0.0
                } else {
                    (*v - mean[j]) / std[j]
                };
            }
        }
        LabeledDataset::new(out, d.labels.clone())
    };
    Ok((apply(train)?, apply(test)?))
}
