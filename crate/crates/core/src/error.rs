use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("file has no header or no data rows")]
    EmptyFile,

    #[error("column `{0}` not found in header")]
    MissingColumn(String),

    #[error("non-numeric cell at data row {row}, column `{col}`")]
    NonNumericCell { row: usize, col: String },

    #[error("non-finite value at row {row}, column {col}")]
    NonFiniteValue { row: usize, col: usize },

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("cannot fit scaler on an empty row set")]
    EmptyFitSet,

    #[error("too few rows: need at least {needed}, got {got}")]
    TooFewRows { needed: usize, got: usize },

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("training diverged: non-finite loss at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },

    #[error("linear system is singular or not positive definite")]
    SingularSystem,

    #[error("invalid regressor spec: {0}")]
    InvalidSpec(String),

    #[error("empty sample")]
    EmptySample,

    #[error("domain error: {0}")]
    DomainError(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("calibration set too small: need at least {needed} rows, got {got}")]
    CalibTooSmall { needed: usize, got: usize },

    #[error("test set is empty")]
    EmptyTestSet,

    #[error("fold {index} failed: {source}")]
    Fold {
        index: usize,
        #[source]
        source: Box<Error>,
    },
}
