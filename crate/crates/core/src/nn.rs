//! Dense feed-forward network with analytic backpropagation.
//!
//! The model is a shared backbone of dense layers followed by an ordered list
//! of per-task linear heads. Training minimizes mean softmax cross-entropy
//! over the concatenation of all head outputs, with plain SGD and a linearly
//! decaying learning rate. The backbone and the heads can be updated with
//! different rates, and the backbone can be frozen entirely.
//!
//! Everything is `f64` and deterministic: the same seed and inputs produce
//! bit-identical parameters after any number of steps.

use std::collections::BTreeMap;

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::ClassId;

/// Element-wise activation applied to a layer's pre-activations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Identity => z,
        }
    }

    /// Derivative with respect to the pre-activation. Relu uses 0 at the kink.
    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

/// One dense layer: `out = activation(W x + b)` with `W: [out x in]`.
#[derive(Debug, Clone)]
pub struct DenseLayer {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: Activation,
}

impl DenseLayer {
    /// Scaled-uniform initialization: weights in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`,
    /// zero bias.
    fn init(out_dim: usize, in_dim: usize, activation: Activation, rng: &mut ChaCha8Rng) -> Self {
        let scale = 1.0 / (in_dim as f64).sqrt();
        let mut weights = Array2::zeros((out_dim, in_dim));
        for w in weights.iter_mut() {
            *w = rng.random_range(-scale..=scale);
        }
        DenseLayer {
            weights,
            bias: Array1::zeros(out_dim),
            activation,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.nrows()
    }

    /// Pre-activations for a batch: `z = x W^T + b`.
    fn preactivations(&self, batch: &Array2<f64>) -> Array2<f64> {
        batch.dot(&self.weights.t()) + &self.bias
    }
}

/// The feature extractor: a chain of dense layers.
#[derive(Debug, Clone)]
pub struct Backbone {
    pub layers: Vec<DenseLayer>,
    /// Output dimension of the last layer.
    pub feature_dim: usize,
    /// When false, gradients for every backbone parameter are zero and
    /// `sgd_step` leaves the backbone untouched.
    pub trainable: bool,
}

impl Backbone {
    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    /// Forward pass through every layer.
    pub fn features(&self, batch: &Array2<f64>) -> Result<Array2<f64>> {
        if batch.ncols() != self.input_dim() {
            return Err(Error::ShapeMismatch(format!(
                "batch has {} columns, backbone expects {}",
                batch.ncols(),
                self.input_dim()
            )));
        }
        let mut out = batch.to_owned();
        for layer in &self.layers {
            let z = layer.preactivations(&out);
            out = z.mapv(|v| layer.activation.apply(v));
        }
        Ok(out)
    }

    /// Forward pass keeping per-layer pre-activations and activations for
    /// backpropagation. `acts[0]` is the input; `acts[i+1]` feeds layer `i+1`.
    fn forward_trace(&self, batch: &Array2<f64>) -> Result<ForwardTrace> {
        if batch.ncols() != self.input_dim() {
            return Err(Error::ShapeMismatch(format!(
                "batch has {} columns, backbone expects {}",
                batch.ncols(),
                self.input_dim()
            )));
        }
        let mut acts = vec![batch.to_owned()];
        let mut preacts = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let z = layer.preactivations(acts.last().unwrap());
            acts.push(z.mapv(|v| layer.activation.apply(v)));
            preacts.push(z);
        }
        Ok((preacts, acts))
    }
}

/// Per-layer (pre-activations, activations) from a traced forward pass.
type ForwardTrace = (Vec<Array2<f64>>, Vec<Array2<f64>>);

/// Linear classification head for one task.
#[derive(Debug, Clone)]
pub struct TaskHead {
    /// Identity-activation dense layer of width `class_ids.len()`.
    pub layer: DenseLayer,
    /// Global ids of the classes this head predicts; logit column `j`
    /// corresponds to `class_ids[j]`.
    pub class_ids: Vec<ClassId>,
}

/// Backbone plus the ordered list of task heads grown so far.
#[derive(Debug, Clone)]
pub struct Model {
    pub backbone: Backbone,
    pub heads: Vec<TaskHead>,
}

/// Gradient arrays for one dense layer, shape-matching its parameters.
#[derive(Debug, Clone)]
pub struct LayerGrads {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl LayerGrads {
    fn zeros_like(layer: &DenseLayer) -> Self {
        LayerGrads {
            weights: Array2::zeros(layer.weights.raw_dim()),
            bias: Array1::zeros(layer.bias.raw_dim()),
        }
    }
}

/// Gradients for every parameter in a model, in model order.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub backbone: Vec<LayerGrads>,
    pub heads: Vec<LayerGrads>,
}

impl Model {
    /// Build a backbone from `layer_dims` (input dim first, feature dim last)
    /// with relu activations and no heads. Deterministic per seed.
    pub fn init_network(layer_dims: &[usize], seed: u64) -> Result<Model> {
        if layer_dims.len() < 2 {
            return Err(Error::InvalidConfig(format!(
                "layer_dims needs at least an input and an output dimension, got {:?}",
                layer_dims
            )));
        }
        if layer_dims.contains(&0) {
            return Err(Error::InvalidConfig(format!(
                "layer_dims must be positive, got {:?}",
                layer_dims
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = layer_dims
            .windows(2)
            .map(|pair| DenseLayer::init(pair[1], pair[0], Activation::Relu, &mut rng))
            .collect::<Vec<_>>();
        Ok(Model {
            backbone: Backbone {
                feature_dim: *layer_dims.last().unwrap(),
                layers,
                trainable: true,
            },
            heads: Vec::new(),
        })
    }

    /// Append a linear head for `class_ids`. Ids must be disjoint from every
    /// existing head.
    pub fn add_head(&mut self, class_ids: &[ClassId], seed: u64) -> Result<()> {
        if class_ids.is_empty() {
            return Err(Error::InvalidConfig("head needs at least one class".into()));
        }
        let mut seen: Vec<ClassId> = self
            .heads
            .iter()
            .flat_map(|h| h.class_ids.iter().copied())
            .collect();
        for &c in class_ids {
            if seen.contains(&c) {
                return Err(Error::ClassOverlap(c));
            }
            seen.push(c); // also rejects duplicates within the new list
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.heads.push(TaskHead {
            layer: DenseLayer::init(
                class_ids.len(),
                self.backbone.feature_dim,
                Activation::Identity,
                &mut rng,
            ),
            class_ids: class_ids.to_vec(),
        });
        Ok(())
    }

    /// Backbone features for a batch.
    pub fn forward_features(&self, batch: &Array2<f64>) -> Result<Array2<f64>> {
        self.backbone.features(batch)
    }

    /// Concatenated head logits; columns follow head order, then the head's
    /// class list order.
    pub fn forward_logits(&self, batch: &Array2<f64>) -> Result<Array2<f64>> {
        let features = self.forward_features(batch)?;
        self.logits_from_features(&features)
    }

    /// Head logits from precomputed backbone features. Lets evaluation reuse
    /// one feature pass across classifier kinds.
    pub fn logits_from_features(&self, features: &Array2<f64>) -> Result<Array2<f64>> {
        if self.heads.is_empty() {
            return Err(Error::NoHeads);
        }
        if features.ncols() != self.backbone.feature_dim {
            return Err(Error::ShapeMismatch(format!(
                "features have {} columns, heads expect {}",
                features.ncols(),
                self.backbone.feature_dim
            )));
        }
        let n = features.nrows();
        let mut logits = Array2::zeros((n, self.num_classes()));
        let mut col = 0;
        for head in &self.heads {
            let block = head.layer.preactivations(features);
            logits
                .slice_mut(ndarray::s![.., col..col + head.class_ids.len()])
                .assign(&block);
            col += head.class_ids.len();
        }
        Ok(logits)
    }

    /// Total number of classes across all heads.
    pub fn num_classes(&self) -> usize {
        self.heads.iter().map(|h| h.class_ids.len()).sum()
    }

    /// Class id of each logit column, in column order.
    pub fn class_columns(&self) -> Vec<ClassId> {
        self.heads
            .iter()
            .flat_map(|h| h.class_ids.iter().copied())
            .collect()
    }

    fn column_of_class(&self) -> BTreeMap<ClassId, usize> {
        self.class_columns()
            .into_iter()
            .enumerate()
            .map(|(col, c)| (c, col))
            .collect()
    }

    /// Mean softmax cross-entropy over the batch plus gradients for every
    /// parameter. Backbone gradient arrays are present but zero when the
    /// backbone is frozen.
    pub fn loss_and_grads(
        &self,
        batch: &Array2<f64>,
        labels: &[ClassId],
    ) -> Result<(f64, Gradients)> {
        if self.heads.is_empty() {
            return Err(Error::NoHeads);
        }
        if batch.nrows() != labels.len() {
            return Err(Error::ShapeMismatch(format!(
                "batch has {} rows but {} labels given",
                batch.nrows(),
                labels.len()
            )));
        }
        if batch.nrows() == 0 {
            return Err(Error::EmptyInput("loss over an empty batch".into()));
        }
        let col_of = self.column_of_class();
        let label_cols = labels
            .iter()
            .map(|c| col_of.get(c).copied().ok_or(Error::UncoveredLabel(*c)))
            .collect::<Result<Vec<_>>>()?;

        let (preacts, acts) = self.backbone.forward_trace(batch)?;
        let features = acts.last().unwrap();
        let logits = self.logits_from_features(features)?;

        let n = batch.nrows();
        let inv_n = 1.0 / n as f64;
        let mut loss = 0.0;
        let mut dlogits = Array2::zeros(logits.raw_dim());
        for (row, &label_col) in label_cols.iter().enumerate() {
            let row_logits = logits.row(row);
            let max = row_logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let sum_exp: f64 = row_logits.iter().map(|&z| (z - max).exp()).sum();
            loss += max + sum_exp.ln() - row_logits[label_col];
            for (col, &z) in row_logits.iter().enumerate() {
                let p = (z - max).exp() / sum_exp;
                let target = if col == label_col { 1.0 } else { 0.0 };
                dlogits[(row, col)] = (p - target) * inv_n;
            }
        }
        loss *= inv_n;

        // Head gradients, plus the loss gradient with respect to the features.
        let mut head_grads = Vec::with_capacity(self.heads.len());
        let mut dfeatures = Array2::zeros(features.raw_dim());
        let mut col = 0;
        for head in &self.heads {
            let width = head.class_ids.len();
            let block = dlogits.slice(ndarray::s![.., col..col + width]);
            head_grads.push(LayerGrads {
                weights: block.t().dot(features),
                bias: block.sum_axis(Axis(0)),
            });
            dfeatures = dfeatures + block.dot(&head.layer.weights);
            col += width;
        }

        let backbone_grads = if self.backbone.trainable {
            let mut grads: Vec<LayerGrads> = self
                .backbone
                .layers
                .iter()
                .map(LayerGrads::zeros_like)
                .collect();
            let mut delta = dfeatures;
            for idx in (0..self.backbone.layers.len()).rev() {
                let layer = &self.backbone.layers[idx];
                // dL/dz = dL/da * activation'(z)
                delta.zip_mut_with(&preacts[idx], |d, &z| *d *= layer.activation.derivative(z));
                grads[idx].weights = delta.t().dot(&acts[idx]);
                grads[idx].bias = delta.sum_axis(Axis(0));
                if idx > 0 {
                    delta = delta.dot(&layer.weights);
                }
            }
            grads
        } else {
            self.backbone
                .layers
                .iter()
                .map(LayerGrads::zeros_like)
                .collect()
        };

        Ok((
            loss,
            Gradients {
                backbone: backbone_grads,
                heads: head_grads,
            },
        ))
    }

    /// One SGD update: `p <- p - lr * grad`, with `lr_backbone` for the
    /// backbone and `lr_heads` for every head. A frozen backbone is skipped.
    pub fn sgd_step(&mut self, grads: &Gradients, lr_backbone: f64, lr_heads: f64) -> Result<()> {
        if lr_backbone < 0.0 || lr_heads < 0.0 {
            return Err(Error::InvalidConfig(
                "learning rates must be non-negative".into(),
            ));
        }
        if grads.backbone.len() != self.backbone.layers.len()
            || grads.heads.len() != self.heads.len()
        {
            return Err(Error::ShapeMismatch(
                "gradient layer count does not match the model".into(),
            ));
        }
        let check = |layer: &DenseLayer, g: &LayerGrads| -> Result<()> {
            if layer.weights.raw_dim() != g.weights.raw_dim()
                || layer.bias.raw_dim() != g.bias.raw_dim()
            {
                return Err(Error::ShapeMismatch(
                    "gradient shape does not match its parameter".into(),
                ));
            }
            Ok(())
        };
        for (layer, g) in self.backbone.layers.iter().zip(&grads.backbone) {
            check(layer, g)?;
        }
        for (head, g) in self.heads.iter().zip(&grads.heads) {
            check(&head.layer, g)?;
        }

        if self.backbone.trainable {
            for (layer, g) in self.backbone.layers.iter_mut().zip(&grads.backbone) {
                layer.weights.scaled_add(-lr_backbone, &g.weights);
                layer.bias.scaled_add(-lr_backbone, &g.bias);
            }
        }
        for (head, g) in self.heads.iter_mut().zip(&grads.heads) {
            head.layer.weights.scaled_add(-lr_heads, &g.weights);
            head.layer.bias.scaled_add(-lr_heads, &g.bias);
        }
        Ok(())
    }
}

/// Linearly decaying learning rate: `lr(e) = lr0 * (1 - e / total_epochs)`.
#[derive(Debug, Clone, Copy)]
pub struct LrSchedule {
    pub lr0: f64,
    pub total_epochs: usize,
}

impl LrSchedule {
    pub fn new(lr0: f64, total_epochs: usize) -> Result<Self> {
        if lr0 <= 0.0 || lr0.is_nan() || total_epochs == 0 {
            return Err(Error::InvalidConfig(
                "lr0 must be positive and total_epochs at least 1".into(),
            ));
        }
        Ok(LrSchedule { lr0, total_epochs })
    }

    /// Rate for `epoch` in `0..total_epochs`.
    pub fn lr_at(&self, epoch: usize) -> Result<f64> {
        if epoch >= self.total_epochs {
            return Err(Error::EpochOutOfRange {
                epoch,
                total: self.total_epochs,
            });
        }
        Ok(self.lr0 * (1.0 - epoch as f64 / self.total_epochs as f64))
    }
}

/// Backbone and head learning rates for finetuning a pretrained backbone
/// more slowly than its heads.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SlowLearnerConfig {
    pub backbone_lr: f64,
    pub head_lr: f64,
}

impl SlowLearnerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.backbone_lr > 0.0 && self.head_lr > 0.0 {
            Ok(())
        } else {
            Err(Error::InvalidConfig(
                "slow learner rates must be positive".into(),
            ))
        }
    }
}
