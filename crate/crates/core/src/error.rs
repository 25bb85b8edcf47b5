use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("instance too large: n = {n} exceeds cap {cap}")]
    SizeExceeded { n: usize, cap: usize },

    #[error("invalid input: {0}")]
    Validation(String),

    #[error("point outside density support: coordinate {coord} = {value}, half-width {half_width}")]
    OutOfSupport {
        coord: usize,
        value: f64,
        half_width: f64,
    },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("no nonzero kernel vector exists (residual rank {rank})")]
    RankAnomaly { rank: usize },

    #[error("clean-up draw budget exhausted: best |v|_2 reached {best_l2}, threshold {threshold}")]
    PhaseFailure { best_l2: f64, threshold: f64 },

    #[error("impossible state: {0}")]
    ImpossibleState(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
