//! CART decision trees and bagged random forests over the 8 window
//! features, plus the binary envelope used to ship trained models.

mod dataset;
mod ensemble;
mod envelope;
mod split;
mod tree;

use thiserror::Error;

use crate::features::N_FEATURES;
use crate::model::ClassLabel;

pub use dataset::{write_labeled_csv, Dataset, Features};
pub use ensemble::{
    evaluate, train_forest, train_model, ConfusionMatrix, Evaluation, Model, ModelKind, RandomForest,
};
pub use envelope::{deserialize_model, serialize_model, EnvelopeError, ENVELOPE_MAGIC, FORMAT_VERSION};
pub use split::{best_split, Split};
pub use tree::{train_tree, DecisionTree, TreeNode};

#[derive(Debug, Error)]
pub enum ForestError {
    #[error("cannot train on an empty dataset")]
    EmptyDataset,
    #[error("expected {expected} features, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid training parameters: {0}")]
    InvalidParams(String),
    #[error("bad training data: {0}")]
    BadTrainingData(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub label: ClassLabel,
    /// Fraction of leaf (or summed forest) mass behind `label`.
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainParams {
    pub max_depth: usize,
    /// Nodes with fewer (weighted) rows become leaves.
    pub min_samples_split: u64,
    pub n_trees: usize,
    pub features_per_split: usize,
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for TrainParams {
    fn default() -> Self {
        Self {
            max_depth: 12,
            min_samples_split: 4,
            n_trees: 20,
            features_per_split: 3,
            bootstrap: true,
            seed: 0,
        }
    }
}

impl TrainParams {
    /// Defaults for a single tree: every feature at every node, no bootstrap.
    pub fn single_tree() -> Self {
        Self {
            n_trees: 1,
            features_per_split: N_FEATURES,
            bootstrap: false,
            ..Self::default()
        }
    }

    pub fn for_kind(kind: ModelKind) -> Self {
        match kind {
            ModelKind::Tree => Self::single_tree(),
            ModelKind::Forest => Self::default(),
        }
    }

    pub fn validate(&self) -> Result<(), ForestError> {
        if self.min_samples_split < 2 {
            return Err(ForestError::InvalidParams("min_samples_split must be >= 2".into()));
        }
        if !(1..=N_FEATURES).contains(&self.features_per_split) {
            return Err(ForestError::InvalidParams(format!(
                "features_per_split must be in 1..={N_FEATURES}"
            )));
        }
        Ok(())
    }
}
