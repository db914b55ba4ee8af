//! Random Fourier feature student: projection, logistic head fitted on
//! teacher pseudo-labels, and the deployable `NSRF` file.

mod classifier;
mod io;
mod projection;

pub use classifier::{
    distill, fidelity, fidelity_from_probs, DistillConfig, DistillReport, DistilledClassifier, FidelityReport,
    InputNormalization,
};
pub use io::{read_classifier, write_classifier, CLASSIFIER_MAGIC, CLASSIFIER_VERSION};
pub use projection::{kernel_estimate, median_heuristic, rbf_kernel, InferenceProbe, NoProbe, RffProjection};

/// Default frequency count `D`.
pub const DEFAULT_PAIRS: usize = 256;

#[derive(Debug, thiserror::Error)]
pub enum RffError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("bandwidth must be positive and finite, got {0}")]
    Bandwidth(f64),
    #[error("non-finite value")]
    NonFinite,
    #[error(
        "pseudo-labels contain a single class ({positives} positive of {total}); \
         adjust the labeling percentile so both classes occur"
    )]
    SingleClass { positives: usize, total: usize },
    #[error("empty evaluation set")]
    Empty,
    #[error("invalid config: {0}")]
    Config(String),
    #[error("classifier file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, RffError>;
