//! Pipeline orchestration behind the `nsad` binary: configuration, the
//! per-stage logic and the subcommands.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;
pub mod error;
pub mod infer;
pub mod pipeline;

pub use config::PipelineConfig;
pub use error::{CliError, Result};
