use thiserror::Error;

use crate::data::IdxError;
use crate::simulator::checkpoint::CheckpointError;

/// Errors produced by the simulator and its building blocks.
#[derive(Debug, Error)]
pub enum AsaError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("round {round} failed: {reason}")]
    RoundFailed { round: u64, reason: String },

    #[error(transparent)]
    Idx(#[from] IdxError),

    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = AsaError> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> AsaError {
    AsaError::InvalidInput(msg.into())
}

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(AsaError::DimensionMismatch { expected, got })
    }
}
