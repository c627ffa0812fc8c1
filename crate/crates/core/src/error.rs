use std::path::PathBuf;

/// Errors produced by the estimation library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("file is empty")]
    EmptyFile,
    #[error("line {line}: malformed record: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: vector has dimension {found}, expected {expected}")]
    DimensionMismatch {
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("line {line}: duplicate id {id:?}")]
    DuplicateId { line: usize, id: String },
    #[error("id {0:?} is not part of the dataset")]
    UnknownId(String),
    #[error("dataset id {0:?} has no record")]
    MissingId(String),
    #[error("line {line}: hard and soft cluster records are mixed")]
    MixedFormat { line: usize },
    #[error("line {line}: distribution sums to {sum}, expected 1")]
    BadDistribution { line: usize, sum: f64 },
    #[error("label {label} is out of range for {k_ref} reference clusters")]
    LabelOutOfRange { label: usize, k_ref: usize },
    #[error("id {0:?} is not in the pending query batch")]
    NotPending(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error("annotator failed in round {round}: {message}")]
    Annotator { round: usize, message: String },
    #[error("pair set has no {0} pairs; more annotation needed")]
    Unbalanceable(&'static str),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    /// True for failures caused by bad user input rather than by the library.
    pub fn is_user_error(&self) -> bool {
        !matches!(self, Error::Shape(_))
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
