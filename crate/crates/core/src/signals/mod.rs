//! Multivariate sensor streams: synthesis, CSV ingestion, windowing and
//! z-score normalization.
//!
//! Ground-truth [`AnomalyTag`]s only reach [`ground_truth`]; every training
//! entry point in the crate takes [`Window`]s.

mod csv_io;
mod generator;
mod normalize;
mod window;

pub use csv_io::{read_stream_csv, read_tags_csv, write_stream_csv, write_tags_csv};
pub use generator::{generate_stream, ChannelSpec, Coupling, GeneratorConfig, Sinusoid};
pub use normalize::NormalizationStats;
pub use window::{ground_truth, overlapping_tags, windowize, Window};

use std::fmt;
use std::str::FromStr;

#[derive(Debug, thiserror::Error)]
pub enum SignalError {
    #[error("invalid generator config: {0}")]
    InvalidConfig(String),
    #[error("empty input")]
    Empty,
    #[error("line {line}: expected {expected} fields, found {found}")]
    RaggedRow {
        line: u64,
        expected: usize,
        found: usize,
    },
    #[error("line {line}, column `{column}`: {message}")]
    BadCell {
        line: u64,
        column: String,
        message: String,
    },
    #[error("window length {window} exceeds stream length {len}")]
    WindowTooLong { window: usize, len: usize },
    #[error("window length and stride must be positive")]
    InvalidStride,
    #[error("channel `{0}` has zero variance")]
    ZeroVariance(String),
    #[error("window has {found} channels, expected {expected}")]
    ChannelMismatch { expected: usize, found: usize },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, SignalError>;

/// Multichannel sample stream; `data[c][i]` is channel `c` at sample `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct Stream {
    pub channel_names: Vec<String>,
    pub timestamps: Vec<String>,
    pub data: Vec<Vec<f64>>,
}

impl Stream {
    pub fn channels(&self) -> usize {
        self.data.len()
    }

    pub fn len(&self) -> usize {
        self.data.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Samples `[start, end)`.
    pub fn slice(&self, start: usize, end: usize) -> Stream {
        Stream {
            channel_names: self.channel_names.clone(),
            timestamps: self.timestamps[start..end].to_vec(),
            data: self.data.iter().map(|c| c[start..end].to_vec()).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AnomalyKind {
    Spike,
    Drift,
    Stuck,
    CorrelationBreak,
    None,
}

impl AnomalyKind {
    pub const INJECTABLE: [AnomalyKind; 4] = [
        AnomalyKind::Spike,
        AnomalyKind::Drift,
        AnomalyKind::Stuck,
        AnomalyKind::CorrelationBreak,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AnomalyKind::Spike => "spike",
            AnomalyKind::Drift => "drift",
            AnomalyKind::Stuck => "stuck",
            AnomalyKind::CorrelationBreak => "correlation-break",
            AnomalyKind::None => "none",
        }
    }
}

impl fmt::Display for AnomalyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AnomalyKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "spike" => Ok(AnomalyKind::Spike),
            "drift" => Ok(AnomalyKind::Drift),
            "stuck" => Ok(AnomalyKind::Stuck),
            "correlation-break" => Ok(AnomalyKind::CorrelationBreak),
            "none" => Ok(AnomalyKind::None),
            other => Err(format!("unknown anomaly kind `{other}`")),
        }
    }
}

/// Ground-truth record of one generator segment. `kind == None` marks a
/// nominal segment. Interval is `[start, end)` in stream samples.
#[derive(Debug, Clone, PartialEq)]
pub struct AnomalyTag {
    pub kind: AnomalyKind,
    pub channels: Vec<usize>,
    pub start: usize,
    pub end: usize,
}

impl AnomalyTag {
    pub fn is_anomaly(&self) -> bool {
        self.kind != AnomalyKind::None
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }
}
