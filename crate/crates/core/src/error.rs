use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid partition: {0}")]
    InvalidPartition(String),

    #[error("model dimension {dimension} exceeds sample size {n}")]
    DimensionExceedsSample { dimension: usize, n: usize },

    #[error("sample is empty")]
    EmptySample,

    #[error("point {0} lies outside the domain [0, 1]")]
    OutOfDomain(f64),

    #[error(
        "weighted Gram matrix is not invertible on cell {cell} (design density vanishes there?)"
    )]
    SingularGram { cell: usize },

    #[error("invalid regression specification: {0}")]
    InvalidSpec(String),

    #[error("length mismatch: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },

    #[error("invalid penalty: {0}")]
    InvalidPenalty(String),

    #[error("invalid multiplier grid: {0}")]
    InvalidGrid(String),

    #[error("selected dimension does not jump along the penalty path")]
    NoJump,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
