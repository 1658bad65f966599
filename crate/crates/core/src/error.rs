use thiserror::Error;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid tensor shape: {0}")]
    InvalidShape(&'static str),
    #[error("mode {mode} out of range for a {order}-way tensor")]
    ModeOutOfRange { mode: usize, order: usize },
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("column count mismatch: {left} vs {right}")]
    ColumnMismatch { left: usize, right: usize },
    #[error("level {level} out of range 1..={levels}")]
    LevelOutOfRange { level: usize, levels: usize },
    #[error("invalid index tuple: {0}")]
    InvalidIndex(&'static str),
    #[error("invalid boundaries: {0}")]
    InvalidBoundaries(&'static str),
    #[error("invalid parameter: {0}")]
    InvalidParameter(&'static str),
    #[error("observation set is empty")]
    EmptyObservations,
    #[error("holdout set is empty")]
    EmptyHoldout,
    #[error("split leaves the training set empty")]
    EmptyTrain,
    #[error("reference tensor is zero")]
    ZeroTensor,
    #[error("degenerate random draw: {0}")]
    DegenerateDraw(&'static str),
    #[error("non-finite value at iteration {iteration}")]
    NonFinite { iteration: usize },
}
