use thiserror::Error;

use crate::solver::Solution;

#[derive(Debug, Error)]
pub enum OtError {
    #[error("negative cost {value} at ({row}, {col})")]
    NegativeCost { row: usize, col: usize, value: f64 },

    #[error("invalid marginal `{name}`: {reason}")]
    InvalidMarginal { name: &'static str, reason: String },

    #[error("length mismatch for {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid rounding input: {0}")]
    RoundingInput(String),

    #[error("exact oracle supports n <= {max}, got n = {n}")]
    OracleTooLarge { n: usize, max: usize },

    #[error("transportation simplex exceeded {0} pivots")]
    PivotLimit(usize),

    #[error("max_outer exceeded after {} outer iterations; best gap {}", .best.outer_iterations, .best.gap)]
    MaxOuterExceeded { best: Box<Solution> },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, OtError>;
