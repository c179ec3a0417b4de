//! Experiment configuration: JSON-loadable, unknown keys rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::SyntheticSpec;
use crate::error::{Error, Result};
use crate::metrics::{ClassifierKind, EvalModeKind};
use crate::nn::SlowLearnerConfig;
use crate::replay::MemoryPolicy;

/// Data source: generated Gaussian clusters or a pair of CSV files.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataConfig {
    Synthetic(SyntheticSpec),
    Csv { train: PathBuf, test: PathBuf },
}

/// Sequential training uses the exemplar buffer for rehearsal; joint
/// incremental training uses the union of all task training sets seen so far.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainingMode {
    #[default]
    Sequential,
    JointIncremental,
}

/// Backbone pretraining on a disjoint base class set; the pretraining head is
/// discarded afterwards, emulating initialization from a pretrained network.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PretrainConfig {
    pub base_classes: usize,
    pub epochs: usize,
}

fn default_epochs() -> usize {
    100
}
fn default_batch_size() -> usize {
    128
}
fn default_classifiers() -> Vec<ClassifierKind> {
    vec![ClassifierKind::Linear, ClassifierKind::Nmc]
}
fn default_eval_modes() -> Vec<EvalModeKind> {
    vec![EvalModeKind::TaskAgnostic]
}
fn default_hidden_dims() -> Vec<usize> {
    vec![64, 32]
}

/// Full recipe for one experiment over one or more seeds.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: DataConfig,
    pub tasks: usize,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    pub lr0: f64,
    #[serde(default)]
    pub slow_learner: Option<SlowLearnerConfig>,
    pub memory: MemoryPolicy,
    #[serde(default)]
    pub warmup_epochs: usize,
    #[serde(default)]
    pub mode: TrainingMode,
    #[serde(default)]
    pub pretrain: Option<PretrainConfig>,
    #[serde(default = "default_classifiers")]
    pub classifiers: Vec<ClassifierKind>,
    #[serde(default)]
    pub normalize_features: bool,
    pub seeds: Vec<u64>,
    #[serde(default = "default_eval_modes")]
    pub eval_modes: Vec<EvalModeKind>,
    /// Backbone layer widths after the input layer; the last entry is the
    /// feature dimension.
    #[serde(default = "default_hidden_dims")]
    pub hidden_dims: Vec<usize>,
}

impl ExperimentConfig {
    pub fn from_json_str(json: &str) -> Result<Self> {
        let config: ExperimentConfig = serde_json::from_str(json)?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.tasks == 0 || self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidConfig(
                "tasks, epochs, and batch_size must be positive".into(),
            ));
        }
        if self.lr0 <= 0.0 || self.lr0.is_nan() {
            return Err(Error::InvalidConfig("lr0 must be positive".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::InvalidConfig("at least one seed required".into()));
        }
        if self.classifiers.is_empty() || has_duplicates(&self.classifiers) {
            return Err(Error::InvalidConfig(
                "classifiers must be a nonempty set without duplicates".into(),
            ));
        }
        if self.eval_modes.is_empty() || has_duplicates(&self.eval_modes) {
            return Err(Error::InvalidConfig(
                "eval_modes must be a nonempty set without duplicates".into(),
            ));
        }
        if self.hidden_dims.is_empty() || self.hidden_dims.contains(&0) {
            return Err(Error::InvalidConfig(
                "hidden_dims must be nonempty and positive".into(),
            ));
        }
        self.memory.validate()?;
        if let Some(sl) = &self.slow_learner {
            sl.validate()?;
        }
        if let DataConfig::Synthetic(spec) = &self.data {
            spec.validate()?;
        }
        if let Some(p) = &self.pretrain {
            if p.base_classes == 0 || p.epochs == 0 {
                return Err(Error::InvalidConfig(
                    "pretrain base_classes and epochs must be positive".into(),
                ));
            }
            if !matches!(self.data, DataConfig::Synthetic(_)) {
                return Err(Error::InvalidConfig(
                    "pretraining requires synthetic data to draw base classes from".into(),
                ));
            }
        }
        Ok(())
    }
}

fn has_duplicates<T: PartialEq>(items: &[T]) -> bool {
    items
        .iter()
        .enumerate()
        .any(|(i, x)| items[..i].contains(x))
}
