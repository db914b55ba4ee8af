use nsad_core::ddpm::DdpmError;
use nsad_core::nesy::KbError;
use nsad_core::rff::RffError;
use nsad_core::signals::SignalError;

/// Command failure, classified by exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad flags, config or knowledge base (exit 1).
    #[error("{0}")]
    Usage(String),
    /// Unreadable, malformed or unsuitable data (exit 2).
    #[error("{0}")]
    Data(String),
    /// Non-finite loss or score (exit 3).
    #[error("{0}")]
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<SignalError> for CliError {
    fn from(e: SignalError) -> Self {
        match e {
            SignalError::InvalidConfig(_) | SignalError::InvalidStride => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<KbError> for CliError {
    fn from(e: KbError) -> Self {
        CliError::Usage(format!("knowledge base: {e}"))
    }
}

impl From<DdpmError> for CliError {
    fn from(e: DdpmError) -> Self {
        match e {
            DdpmError::NonFiniteLoss { .. } | DdpmError::NonFiniteScore => CliError::Numeric(e.to_string()),
            DdpmError::InvalidSchedule(_) | DdpmError::Levels(_) | DdpmError::StepOutOfRange { .. } => {
                CliError::Usage(e.to_string())
            }
            DdpmError::Kb(k) => k.into(),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<RffError> for CliError {
    fn from(e: RffError) -> Self {
        match e {
            RffError::NonFinite => CliError::Numeric(e.to_string()),
            RffError::Config(_) | RffError::Bandwidth(_) => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}
