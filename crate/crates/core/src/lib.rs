//! A class-incremental learning laboratory.
//!
//! A small dense feed-forward classifier is trained over a sequence of
//! disjoint class-incremental tasks. At the end of every training epoch the
//! shared backbone is evaluated under three classification regimes:
//!
//! * `linear` — argmax over the concatenated per-task linear heads,
//! * `nmc` — nearest-mean classifier over prototypes built from the exemplar
//!   buffer (previous tasks) and the current task's training set,
//! * `oracle_nmc` — nearest-mean classifier whose prototypes are built from
//!   every training sample seen so far.
//!
//! The per-epoch accuracies feed the continual-evaluation metrics: average
//! incremental accuracy, average minimum accuracy, worst-case accuracy, the
//! stability gap, and the latest-task prediction bias.

pub mod classify;
pub mod data;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod nn;
pub mod replay;

pub use error::{Error, Result};

/// Global class identifier. Ids are non-negative and unique across tasks.
pub type ClassId = usize;
