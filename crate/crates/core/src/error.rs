use thiserror::Error;

use crate::training::EpochStats;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Training stopped because the loss (or a parameter) stopped being finite.
#[derive(Debug, Clone, PartialEq)]
pub struct Divergence {
    /// Global step index (0-based) at which the non-finite value appeared.
    pub step: usize,
    /// Epochs completed before the failure.
    pub history: Vec<EpochStats>,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("architecture mismatch: {0}")]
    ArchMismatch(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("training diverged at step {}", .0.step)]
    Diverged(Box<Divergence>),

    #[error("all grid-search runs diverged")]
    AllDiverged,

    #[error("empty input: {0}")]
    Empty(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("format error: {0}")]
    Format(String),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::InvalidConfig(msg.into())
    }

    pub(crate) fn dims(msg: impl Into<String>) -> Self {
        Error::DimensionMismatch(msg.into())
    }
}
