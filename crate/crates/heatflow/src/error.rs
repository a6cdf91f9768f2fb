// SPDX-License-Identifier: Apache-2.0

use thiserror::Error;

/// Errors raised by the simulator and the experiment runner.
#[derive(Debug, Error)]
pub enum HeatError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("resource limit exceeded: {0}")]
    ResourceLimit(String),

    #[error("numeric inconsistency: {0}")]
    NumericInconsistency(String),

    #[error("invalid configuration: {}", .0.join("; "))]
    Config(Vec<String>),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, HeatError>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(HeatError::InvalidArgument(msg.into()))
}
