//! Hierarchical region classifier.
//!
//! One small network per tree level predicts the child index at that level.
//! From the second level on, a pair of hyper networks turns the class
//! distributions of all previous levels into a per-channel scale and shift
//! of the descriptor before it enters the level's base head.

mod checkpoint;
mod network;
mod params;
mod train;

pub use checkpoint::{load_checkpoint, read_checkpoint_meta, save_checkpoint, CheckpointMeta, CHECKPOINT_MAGIC};
pub use network::{
    compose_label, forward, loss_and_grad, modulate, region_accuracy, LabeledBatch, LevelProbs, LossOutput, LAYER_NORM_EPS,
};
pub use params::{ClassifierParams, ClassifierShape, TensorRole, TensorSpec};
pub use train::{reptile_pretrain, reptile_step, sgd_step, train_fast, train_fast_observed, Adam, MetaConfig, TrainConfig, TrainStep};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ClassifierError {
    #[error("descriptor dimension mismatch: network expects {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("{samples} samples but {labels} labels")]
    LabelCount { samples: usize, labels: usize },
    #[error("label depth mismatch: expected {expected} levels, got {actual}")]
    LabelDepth { expected: usize, actual: usize },
    #[error("class index {0} out of range")]
    ClassOutOfRange(u32),
    #[error("empty batch")]
    EmptyBatch,
    #[error("empty dataset")]
    EmptyDataset,
    #[error("non-finite loss {loss} at iteration {iteration}")]
    NonFiniteLoss { iteration: usize, loss: f64 },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),
    #[error("bad checkpoint: {0}")]
    Format(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl ClassifierError {
    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.display().to_string(),
            source,
        }
    }
}
