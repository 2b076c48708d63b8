use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("margin {0} is outside [0, pi/2)")]
    InvalidMargin(f64),

    #[error("degree must be at least 1, got {0}")]
    InvalidDegree(usize),

    #[error("x = {0} is outside [-1, 1]")]
    OutOfDomain(f64),

    #[error("grid needs at least 2 points, got {0}")]
    GridTooSmall(usize),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("batch is empty")]
    EmptyBatch,

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite cosine at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },

    #[error("cosine {value} at row {row}, column {col} is outside [-1, 1]")]
    CosineOutOfRange { row: usize, col: usize, value: f64 },

    #[error("label {label} at row {row} is out of range for {classes} classes")]
    LabelOutOfRange {
        row: usize,
        label: usize,
        classes: usize,
    },

    #[error("score set needs at least one target and one non-target trial")]
    SingleClass,

    #[error("{}:{line}: {msg}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("no score for trial {enroll} {test} (trial line {line})")]
    MissingScore {
        enroll: String,
        test: String,
        line: usize,
    },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
