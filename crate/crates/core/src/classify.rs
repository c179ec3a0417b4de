//! Classification regimes over a shared trained model.
//!
//! All three regimes read the same backbone; switching classifier kind never
//! mutates parameters. The linear regime takes an argmax over concatenated
//! head logits. The nearest-mean regimes assign the class of the closest
//! prototype in feature space, with prototypes averaged either from the
//! exemplar buffer (previous tasks) plus the current task's training set, or
//! from every training sample seen so far (oracle).
//!
//! Ties are always broken toward the lowest class id.

use std::collections::BTreeMap;

use ndarray::{Array1, Array2};

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::nn::{Backbone, Model};
use crate::replay::MemoryBuffer;
use crate::ClassId;

/// Where a prototype set's sample means came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PrototypeSource {
    Exemplar,
    Oracle,
}

/// Per-class mean feature vectors.
#[derive(Debug, Clone)]
pub struct PrototypeSet {
    pub prototypes: BTreeMap<ClassId, Array1<f64>>,
    pub source: PrototypeSource,
}

impl PrototypeSet {
    pub fn classes(&self) -> Vec<ClassId> {
        self.prototypes.keys().copied().collect()
    }
}

/// Prediction scope: over all classes seen, or restricted to one task.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalMode {
    TaskAgnostic,
    /// Candidates restricted to the classes of this 0-based task index.
    TaskAware(usize),
}

/// Mean backbone feature of the given sample rows. With `normalize`, each
/// feature vector is scaled to unit norm before averaging and the mean is
/// renormalized.
fn prototype_of(backbone: &Backbone, rows: &Array2<f64>, normalize: bool) -> Result<Array1<f64>> {
    if rows.nrows() == 0 {
        return Err(Error::EmptyInput("prototype over zero samples".into()));
    }
    let mut features = backbone.features(rows)?;
    if normalize {
        for mut row in features.rows_mut() {
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 {
                row.mapv_inplace(|v| v / norm);
            }
        }
    }
    let mut mean = features.sum_axis(ndarray::Axis(0)) / rows.nrows() as f64;
    if normalize {
        let norm = mean.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            mean.mapv_inplace(|v| v / norm);
        }
    }
    Ok(mean)
}

/// Gather the rows of `class` from a dataset as a matrix, in dataset order.
fn class_rows(dataset: &LabeledDataset, class: ClassId) -> Array2<f64> {
    let rows = dataset.rows_of_class(class);
    dataset.inputs.select(ndarray::Axis(0), &rows)
}

/// Prototypes from the exemplar buffer for previous classes and from the
/// current task's training set for its own classes.
pub fn compute_prototypes(
    backbone: &Backbone,
    buffer: &MemoryBuffer,
    current_task_train: &LabeledDataset,
    normalize: bool,
) -> Result<PrototypeSet> {
    let mut prototypes = BTreeMap::new();
    for &class in current_task_train.class_set.iter() {
        let rows = class_rows(current_task_train, class);
        prototypes.insert(class, prototype_of(backbone, &rows, normalize)?);
    }
    for class in buffer.classes() {
        if prototypes.contains_key(&class) {
            continue;
        }
        let stored = buffer.exemplars_of(class)?;
        if stored.is_empty() {
            return Err(Error::EmptyInput(format!(
                "class {class} has no stored exemplars"
            )));
        }
        let mut rows = Array2::zeros((stored.len(), stored[0].len()));
        for (i, v) in stored.iter().enumerate() {
            rows.row_mut(i).assign(v);
        }
        prototypes.insert(class, prototype_of(backbone, &rows, normalize)?);
    }
    Ok(PrototypeSet {
        prototypes,
        source: PrototypeSource::Exemplar,
    })
}

/// Prototypes from the full training history: previous classes average over
/// their complete training sets, current classes over the current train set.
pub fn compute_oracle_prototypes(
    backbone: &Backbone,
    full_history: &[&LabeledDataset],
    current_task_train: &LabeledDataset,
    normalize: bool,
) -> Result<PrototypeSet> {
    let mut prototypes = BTreeMap::new();
    for &class in current_task_train.class_set.iter() {
        let rows = class_rows(current_task_train, class);
        prototypes.insert(class, prototype_of(backbone, &rows, normalize)?);
    }
    for dataset in full_history {
        for &class in dataset.class_set.iter() {
            if prototypes.contains_key(&class) {
                continue;
            }
            let rows = class_rows(dataset, class);
            prototypes.insert(class, prototype_of(backbone, &rows, normalize)?);
        }
    }
    Ok(PrototypeSet {
        prototypes,
        source: PrototypeSource::Oracle,
    })
}

/// Candidate classes for a nearest-mean prediction under `mode`, ascending.
pub fn nmc_candidates(
    model: &Model,
    prototypes: &PrototypeSet,
    mode: EvalMode,
) -> Result<Vec<ClassId>> {
    let candidates = match mode {
        EvalMode::TaskAgnostic => prototypes.classes(),
        EvalMode::TaskAware(task) => {
            let head = model.heads.get(task).ok_or(Error::EmptyCandidates)?;
            let mut ids = head.class_ids.clone();
            ids.sort_unstable();
            for &c in &ids {
                if !prototypes.prototypes.contains_key(&c) {
                    return Err(Error::UnknownClass(c));
                }
            }
            ids
        }
    };
    if candidates.is_empty() {
        return Err(Error::EmptyCandidates);
    }
    Ok(candidates)
}

/// Nearest-prototype prediction from precomputed backbone features.
/// `candidates` must be sorted ascending so ties resolve to the lowest id.
pub fn nmc_predict_features(
    prototypes: &PrototypeSet,
    features: &Array2<f64>,
    candidates: &[ClassId],
) -> Result<Vec<ClassId>> {
    if candidates.is_empty() {
        return Err(Error::EmptyCandidates);
    }
    let mut refs = Vec::with_capacity(candidates.len());
    for &c in candidates {
        let proto = prototypes
            .prototypes
            .get(&c)
            .ok_or(Error::UnknownClass(c))?;
        if proto.len() != features.ncols() {
            return Err(Error::ShapeMismatch(format!(
                "prototype dim {} does not match feature dim {}",
                proto.len(),
                features.ncols()
            )));
        }
        refs.push((c, proto));
    }
    let preds = features
        .rows()
        .into_iter()
        .map(|feat| {
            let mut best = refs[0].0;
            let mut best_dist = f64::INFINITY;
            for &(class, proto) in &refs {
                let dist: f64 = feat
                    .iter()
                    .zip(proto.iter())
                    .map(|(&a, &b)| (a - b) * (a - b))
                    .sum();
                if dist < best_dist {
                    best_dist = dist;
                    best = class;
                }
            }
            best
        })
        .collect();
    Ok(preds)
}

/// Nearest-mean classification of a raw input batch.
pub fn nmc_predict(
    model: &Model,
    prototypes: &PrototypeSet,
    batch: &Array2<f64>,
    mode: EvalMode,
) -> Result<Vec<ClassId>> {
    let features = model.forward_features(batch)?;
    let candidates = nmc_candidates(model, prototypes, mode)?;
    nmc_predict_features(prototypes, &features, &candidates)
}

/// Argmax over head logits already computed for a batch.
pub fn linear_predict_from_logits(
    model: &Model,
    logits: &Array2<f64>,
    mode: EvalMode,
) -> Result<Vec<ClassId>> {
    let columns = model.class_columns();
    if logits.ncols() != columns.len() {
        return Err(Error::ShapeMismatch(format!(
            "logits have {} columns, model has {} classes",
            logits.ncols(),
            columns.len()
        )));
    }
    let candidate_cols: Vec<usize> = match mode {
        EvalMode::TaskAgnostic => (0..columns.len()).collect(),
        EvalMode::TaskAware(task) => {
            if task >= model.heads.len() {
                return Err(Error::EmptyCandidates);
            }
            let offset: usize = model.heads[..task]
                .iter()
                .map(|h| h.class_ids.len())
                .sum();
            (offset..offset + model.heads[task].class_ids.len()).collect()
        }
    };
    if candidate_cols.is_empty() {
        return Err(Error::EmptyCandidates);
    }
    let preds = logits
        .rows()
        .into_iter()
        .map(|row| {
            let mut best_class = columns[candidate_cols[0]];
            let mut best_value = f64::NEG_INFINITY;
            for &col in &candidate_cols {
                let value = row[col];
                let class = columns[col];
                if value > best_value || (value == best_value && class < best_class) {
                    best_value = value;
                    best_class = class;
                }
            }
            best_class
        })
        .collect();
    Ok(preds)
}

/// Argmax over concatenated head logits for a raw input batch.
pub fn linear_predict(model: &Model, batch: &Array2<f64>, mode: EvalMode) -> Result<Vec<ClassId>> {
    if model.heads.is_empty() {
        return Err(Error::NoHeads);
    }
    let logits = model.forward_logits(batch)?;
    linear_predict_from_logits(model, &logits, mode)
}

/// Fraction of exact matches.
pub fn accuracy(predictions: &[ClassId], labels: &[ClassId]) -> Result<f64> {
    if predictions.len() != labels.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} predictions vs {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    if predictions.is_empty() {
        return Err(Error::EmptyInput("accuracy over zero samples".into()));
    }
    let hits = predictions
        .iter()
        .zip(labels)
        .filter(|(p, l)| p == l)
        .count();
    Ok(hits as f64 / predictions.len() as f64)
}
