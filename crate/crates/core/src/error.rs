use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum DomaError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("optimizer diverged after {iterations} sweeps (non-finite loss)")]
    Divergence { iterations: usize, loss_trace: Vec<f64> },

    #[error("initialization failed: all {candidates} candidates diverged")]
    InitializationFailed { candidates: usize },

    #[error("exhaustive permutation search too large: {0} permutation pairs")]
    TooLarge(u128),

    #[error("division by zero: {0}")]
    DivisionByZero(&'static str),

    #[error("infeasible ground-truth specification: {0}")]
    InfeasibleSpec(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = DomaError> = std::result::Result<T, E>;

pub(crate) fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(DomaError::DimensionMismatch { expected, found })
    }
}
