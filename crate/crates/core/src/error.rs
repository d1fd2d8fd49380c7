use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dimension: {0}")]
    InvalidDimension(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("design is disconnected; scores are not identifiable")]
    Disconnected,

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("eigensolver failure: {0}")]
    Eigen(String),

    #[error("link is not strongly log-concave on the working interval (minimum curvature {0:.3e})")]
    NotLogConcave(f64),

    #[error("kind mismatch: {0}")]
    KindMismatch(String),

    #[error("packing shortfall: constructed {achieved} of {target} vectors")]
    PackingShortfall { achieved: usize, target: u64 },

    #[error("vector outside the feasible set: {0}")]
    Infeasible(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub(crate) fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::LengthMismatch { expected, got })
    }
}
