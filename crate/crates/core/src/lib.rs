//! Group invariant learning without environment labels.
//!
//! The crate is organised around one pipeline:
//!
//! 1. [`synth`] / [`ingest`] produce a [`dataset::LabeledDataset`] (discrete
//!    worlds with exact joint tables, or patched-colored digit images).
//! 2. A reference model ([`model`], trained by [`train::train_reference`])
//!    captures the spurious correlations of the training set.
//! 3. [`groups`] stratifies the reference outputs until label and reference
//!    output are independent inside every group.
//! 4. [`criteria`] checks the resulting groups for label balance and falsity
//!    exposure, and provides exact checkers on discrete worlds.
//! 5. [`train`] reweights each group to the global label proportion and
//!    minimises the summed group risk plus an invariance penalty.
//! 6. [`select`] picks checkpoints by in-distribution, oracle or
//!    training-environment validation.

pub mod criteria;
pub mod dataset;
pub mod groups;
pub mod ingest;
pub mod model;
pub mod select;
pub mod stats;
pub mod synth;
pub mod train;

pub use dataset::{Annotations, DatasetError, LabeledDataset};
pub use groups::{GroupAssignment, ReferenceOutputs};
pub use model::{Architecture, Gradient, ModelParams};

/// Probabilities are clamped to this floor before any logarithm.
pub const PROB_FLOOR: f64 = 1e-12;
