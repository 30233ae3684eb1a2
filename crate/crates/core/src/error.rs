//! Error type shared by every module of the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("design matrix is singular; refit with a positive ridge")]
    SingularDesign,

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("need at least {needed} points, found {found}")]
    InsufficientData { needed: usize, found: usize },

    #[error("index {index} out of range for {len} points")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("initialization needs at least {needed} points (dimension + 1), got {found}")]
    InsufficientInitialization { needed: usize, found: usize },

    #[error("report stream is empty")]
    EmptyStream,

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("duplicate arrival index {0}")]
    DuplicateArrival(usize),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("problem is underdetermined: {0}")]
    Underdetermined(String),

    #[error("missing column `{0}`")]
    MissingColumn(String),

    #[error("non-numeric cell {value:?} at row {row}, column `{column}`")]
    NonNumericCell {
        row: usize,
        column: String,
        value: String,
    },

    #[error("missing value at row {row}, column `{column}`")]
    MissingValue { row: usize, column: String },

    #[error("no rows left after filtering")]
    EmptyAfterFiltering,

    #[error("schema error at line {line}: {message}")]
    Schema { line: usize, message: String },

    #[error("invalid table: {0}")]
    InvalidTable(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
