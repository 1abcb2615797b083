use thiserror::Error;

/// Errors raised by the sampler library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("ensemble is empty")]
    EmptyEnsemble,

    #[error("particle index {index} out of range for ensemble of {len}")]
    BadIndex { index: usize, len: usize },

    #[error("scheme needs at least {required} particles, ensemble has {got}")]
    TooFewParticles { required: usize, got: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    BadDimension { expected: usize, got: usize },

    #[error("matrix is not symmetric (entry ({row}, {col}))")]
    NotSymmetric { row: usize, col: usize },

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("non-finite state at step {step}")]
    NonFinite { step: u64 },

    #[error("data error{}: {message}", location(.row, .column))]
    DataError {
        row: Option<usize>,
        column: Option<String>,
        message: String,
    },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("invalid {field}: {message}")]
    InvalidParameter { field: String, message: String },

    #[error("i/o error: {0}")]
    Io(String),
}

fn location(row: &Option<usize>, column: &Option<String>) -> String {
    match (row, column) {
        (Some(r), Some(c)) => format!(" at row {r}, column {c}"),
        (Some(r), None) => format!(" at row {r}"),
        (None, Some(c)) => format!(" in column {c}"),
        (None, None) => String::new(),
    }
}

impl Error {
    pub fn invalid(field: &str, message: impl Into<String>) -> Self {
        Error::InvalidParameter {
            field: field.to_string(),
            message: message.into(),
        }
    }

    pub fn data(row: Option<usize>, column: Option<&str>, message: impl Into<String>) -> Self {
        Error::DataError {
            row,
            column: column.map(str::to_string),
            message: message.into(),
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
