use thiserror::Error;

/// Errors raised by the multitask regression and decision library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("task index {index} out of range for {n_tasks} tasks")]
    TaskOutOfRange { index: usize, n_tasks: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("operation requires a linear base kernel")]
    UnsupportedKernel,

    #[error("matrix is singular or not invertible: {0}")]
    SingularMatrix(String),

    #[error("commutation precondition violated: residual {residual:.3e} exceeds tolerance {tolerance:.3e} for block {block}")]
    NotCommuting {
        block: usize,
        residual: f64,
        tolerance: f64,
    },

    #[error("numerical degeneracy: {0}")]
    NumericalDegeneracy(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("inconsistent parameters: {0}")]
    InconsistentParameters(String),

    #[error("empty candidate pool for task {0}")]
    EmptyPool(usize),

    #[error("all learners evicted; the deviation grid contains no well-specified value")]
    AllLearnersEvicted,

    #[error("operation unsupported for this environment: {0}")]
    UnsupportedEnvironment(String),

    #[error("point is not part of the candidate pool of task {0}")]
    UnknownPoint(usize),

    #[error("malformed dataset: {0}")]
    Dataset(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        if e.is_io_error() {
            Error::Io(e.to_string())
        } else {
            Error::Dataset(e.to_string())
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
