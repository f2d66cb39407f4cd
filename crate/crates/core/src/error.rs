use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{source_name}:{line}: {message}")]
    Parse {
        source_name: String,
        line: usize,
        message: String,
    },

    #[error("rating out of range: {0} (expected 1..=5)")]
    RatingOutOfRange(i64),

    #[error("description {description} references unknown {kind} {id}")]
    DanglingReference {
        description: String,
        kind: &'static str,
        id: String,
    },

    #[error("duplicate {kind} id {id}")]
    DuplicateId { kind: &'static str, id: String },

    #[error("unknown description id {0}")]
    UnknownDescription(String),

    #[error("unknown lemma {0}")]
    UnknownLemma(String),

    #[error("missing embedding for key {0}")]
    MissingKey(String),

    #[error("line {line}: expected {expected} values, found {found}")]
    DimensionMismatch {
        line: usize,
        expected: usize,
        found: usize,
    },

    #[error("zero-norm vector for key {0}")]
    ZeroNorm(String),

    #[error("unclassifiable keyword {0}")]
    Unclassifiable(String),

    #[error("case {case}: ground truth {truth} is not among the candidates")]
    MissingGroundTruth { case: String, truth: String },

    #[error("coverage target {target} unreachable (maximum {max})")]
    UnreachableTarget { target: f64, max: f64 },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("image {path}: {message}")]
    Image { path: PathBuf, message: String },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(source_name: impl Into<String>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            source_name: source_name.into(),
            line,
            message: message.into(),
        }
    }
}
