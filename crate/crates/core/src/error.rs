use thiserror::Error;

/// Errors produced by the safe-action pipeline, the environments and the learners.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// Slack inverse requested at or beyond the constraint boundary.
    #[error("slack undefined for constraint value {value} (must be < 0)")]
    Domain { value: f64 },

    #[error("action component {index} = {value} outside [{lower}, {upper}]")]
    Bounds {
        index: usize,
        value: f64,
        lower: f64,
        upper: f64,
    },

    #[error("index {index} out of range (len {len})")]
    Index { index: usize, len: usize },

    #[error("ill-conditioned system: cond(J J^T) = {condition:e}")]
    Singular { condition: f64 },

    #[error("matrix is rank deficient (rank {rank} < {expected})")]
    Rank { rank: usize, expected: usize },

    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("step called on a finished episode")]
    StepAfterDone,

    #[error("no admissible initial state after {attempts} attempts")]
    InitFailure { attempts: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dim(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::Dimension {
            what,
            expected,
            got,
        })
    }
}
