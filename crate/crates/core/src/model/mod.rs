//! Encoder/decoder transformer over context feature sequences.

mod checkpoint;
mod encoding;
mod params;
mod predictor;
mod transformer;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, EpochLog, Provenance, TrainingState, CHECKPOINT_VERSION};
pub use encoding::positional_encoding;
pub use params::{ModelConfig, ModelParams};
pub use predictor::TrajectoryModel;
pub use transformer::{causal_mask, AttentionRecord, AttentionStage, Forward, Transformer};

use crate::context::ContextError;
use crate::numerics::NumericsError;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Context(#[from] ContextError),
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("feature dimension mismatch: model expects {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("non-finite value during {0}")]
    Divergence(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}
