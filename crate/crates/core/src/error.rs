use alloc::string::String;

use thiserror::Error;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("fields live on different grids")]
    GridMismatch,

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("parse error at offset {offset}: {message}")]
    Parse { offset: usize, message: String },

    #[error("value {value} at node {node} outside declared bounds [{lower}, {upper}]")]
    OutOfBounds {
        node: usize,
        value: f64,
        lower: f64,
        upper: f64,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("linear solver stopped after {iterations} iterations with relative residual {residual:e}")]
    LinearSolver { iterations: usize, residual: f64 },

    #[error("matrix is not positive definite (pivot {pivot} = {value:e})")]
    NotPositiveDefinite { pivot: usize, value: f64 },

    #[error("newton iteration failed at step {step} (t = {time}): residual {residual:e} after {iterations} iterations")]
    Newton {
        step: usize,
        time: f64,
        residual: f64,
        iterations: usize,
    },

    #[error("regularization schedule exhausted at k = {k} with successive difference {difference:e} > {tolerance:e}")]
    ScheduleExhausted {
        k: f64,
        difference: f64,
        tolerance: f64,
    },

    #[error("time horizon too short: truncation bound {bound:e} exceeds tolerance {tolerance:e}")]
    HorizonTooShort { bound: f64, tolerance: f64 },

    #[error("expansion fit: {0}")]
    Fit(String),

    #[error("line search failed after {attempts} halvings at iteration {iteration}")]
    LineSearch { iteration: usize, attempts: usize },

    #[error("rank deficient system: effective rank {rank} below required {required}")]
    RankDeficient { rank: usize, required: usize },
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
