//! Denoising diffusion over sensor windows: noise schedule, ε-prediction
//! MLP, training with an optional knowledge-base penalty, multi-level
//! reconstruction scoring and percentile pseudo-labels.

mod model;
mod net;
mod schedule;
mod score;
mod train;

pub use model::DdpmModel;
pub use net::{time_embedding, DenoiserConfig, DenoiserNet, EpsilonPredictor, NetVars};
pub use schedule::{forward_noise, NoiseSchedule, DEFAULT_BETA_END, DEFAULT_BETA_START, DEFAULT_STEPS};
pub use score::{
    apply_threshold, estimate_x0, pseudo_label, reconstruct, reconstruction_noise, reconstruction_profile,
    reconstruction_profiles, Aggregation, ProfileConfig, DEFAULT_DRAWS, ProfileStats, PseudoLabelSet, ReconstructionMode,
    ReconstructionProfile,
};
pub use train::{build_loss, evaluate_mse, train, EpochStats, NoisedBatch, SemanticTerm, TrainConfig};

use crate::nesy::KbError;
use crate::tensor::TensorError;

#[derive(Debug, thiserror::Error)]
pub enum DdpmError {
    #[error("invalid noise schedule: {0}")]
    InvalidSchedule(String),
    #[error("step {t} outside 1..={steps}")]
    StepOutOfRange { t: usize, steps: usize },
    #[error("invalid levels: {0}")]
    Levels(String),
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("non-finite loss in epoch {epoch}")]
    NonFiniteLoss { epoch: usize },
    #[error("non-finite anomaly score")]
    NonFiniteScore,
    #[error("shape: {0}")]
    Shape(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Kb(#[from] KbError),
}

pub type Result<T> = std::result::Result<T, DdpmError>;
