//! Exemplar memory with fixed-total and growing per-class budgets.
//!
//! Exemplars are picked uniformly at random, without replacement, at the end
//! of each task. A fixed-total buffer rebalances its per-class quota over all
//! classes seen so far; the remainder of the budget goes to the lowest class
//! ids, and over-quota classes are truncated by uniform-random drop.

use std::collections::BTreeMap;

use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::ClassId;

/// Exemplar budget policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MemoryPolicy {
    /// At most this many exemplars in total, rebalanced across classes.
    FixedTotal(usize),
    /// At most this many exemplars for each class, never rebalanced.
    PerClass(usize),
}

impl MemoryPolicy {
    pub fn validate(&self) -> Result<()> {
        let budget = match self {
            MemoryPolicy::FixedTotal(b) => *b,
            MemoryPolicy::PerClass(m) => *m,
        };
        if budget == 0 {
            return Err(Error::InvalidConfig("memory budget must be positive".into()));
        }
        Ok(())
    }
}

/// Stored exemplars, bucketed per class in ascending class-id order.
#[derive(Debug, Clone)]
pub struct MemoryBuffer {
    policy: MemoryPolicy,
    store: BTreeMap<ClassId, Vec<Array1<f64>>>,
}

impl MemoryBuffer {
    pub fn new(policy: MemoryPolicy) -> Result<Self> {
        policy.validate()?;
        Ok(MemoryBuffer {
            policy,
            store: BTreeMap::new(),
        })
    }

    pub fn policy(&self) -> MemoryPolicy {
        self.policy
    }

    pub fn total_stored(&self) -> usize {
        self.store.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.store.is_empty()
    }

    /// Classes with stored exemplars, ascending.
    pub fn classes(&self) -> Vec<ClassId> {
        self.store.keys().copied().collect()
    }

    /// Stored exemplars of one class, in stable order.
    pub fn exemplars_of(&self, class: ClassId) -> Result<&[Array1<f64>]> {
        self.store
            .get(&class)
            .map(Vec::as_slice)
            .ok_or(Error::UnknownClass(class))
    }

    /// Ingest a finished task. New classes are sampled to their quota;
    /// under a fixed-total policy old classes are truncated to the new quota.
    pub fn update_after_task(&mut self, task_train: &LabeledDataset, seed: u64) -> Result<()> {
        for &c in task_train.class_set.iter() {
            if self.store.contains_key(&c) {
                return Err(Error::ClassOverlap(c));
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);

        match self.policy {
            MemoryPolicy::PerClass(m) => {
                for &class in task_train.class_set.iter() {
                    let picked = sample_rows(task_train, class, m, &mut rng);
                    self.store.insert(class, picked);
                }
            }
            MemoryPolicy::FixedTotal(budget) => {
                let mut all_classes: Vec<ClassId> = self.store.keys().copied().collect();
                all_classes.extend(task_train.class_set.iter().copied());
                all_classes.sort_unstable();
                let count = all_classes.len();
                let base = budget / count;
                let extra = budget % count;

                for (rank, &class) in all_classes.iter().enumerate() {
                    let quota = base + usize::from(rank < extra);
                    if let Some(stored) = self.store.get_mut(&class) {
                        if stored.len() > quota {
                            let keep =
                                sorted_sample_indices(stored.len(), quota, &mut rng);
                            *stored = keep.into_iter().map(|i| stored[i].clone()).collect();
                        }
                    } else {
                        let picked = sample_rows(task_train, class, quota, &mut rng);
                        self.store.insert(class, picked);
                    }
                }
            }
        }
        Ok(())
    }

    /// Current-task training data plus every stored exemplar. The buffer must
    /// not yet contain the current task.
    pub fn training_pool(&self, current_task_train: &LabeledDataset) -> Result<LabeledDataset> {
        if self.store.is_empty() {
            return Ok(current_task_train.clone());
        }
        let dim = current_task_train.dim();
        let extra = self.total_stored();
        let mut inputs = Array2::zeros((current_task_train.len() + extra, dim));
        inputs
            .slice_mut(ndarray::s![..current_task_train.len(), ..])
            .assign(&current_task_train.inputs);
        let mut labels = current_task_train.labels.clone();
        let mut row = current_task_train.len();
        for (&class, vectors) in &self.store {
            for v in vectors {
                if v.len() != dim {
                    return Err(Error::ShapeMismatch(
                        "stored exemplar dimension differs from the current task".into(),
                    ));
                }
                inputs.row_mut(row).assign(v);
                labels.push(class);
                row += 1;
            }
        }
        LabeledDataset::new(inputs, labels)
    }
}

/// Up to `quota` distinct rows of `class`, uniformly at random, returned in
/// dataset order. Classes with fewer rows than the quota keep everything.
fn sample_rows(
    dataset: &LabeledDataset,
    class: ClassId,
    quota: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<Array1<f64>> {
    let rows = dataset.rows_of_class(class);
    let amount = quota.min(rows.len());
    sorted_sample_indices(rows.len(), amount, rng)
        .into_iter()
        .map(|i| dataset.inputs.row(rows[i]).to_owned())
        .collect()
}

fn sorted_sample_indices(len: usize, amount: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut picked = rand::seq::index::sample(rng, len, amount).into_vec();
    picked.sort_unstable();
    picked
}
