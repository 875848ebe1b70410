use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse classification used by front ends to pick an exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Validation,
    Io,
    Remote,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: malformed record: {message}")]
    MalformedLine { line: usize, message: String },

    #[error("{}unknown label {label:?}", line_prefix(*line))]
    UnknownLabel { line: Option<usize>, label: String },

    #[error("{}text is empty", line_prefix(*line))]
    EmptyText { line: Option<usize> },

    #[error("{}sample has no labels", line_prefix(*line))]
    EmptyLabels { line: Option<usize> },

    #[error("invalid taxonomy: {0}")]
    InvalidVocabulary(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("generation failed for class {class:?}: {message}")]
    GenerationFailed { class: String, message: String },

    #[error("no segment supplied for label {0:?}")]
    MissingSegment(String),

    #[error("cannot normalize a zero or non-finite vector")]
    DegenerateEmbedding,

    #[error("projection collapsed to a zero vector")]
    DegenerateProjection,

    #[error("row {row}: expected dimension {expected}, found {found}")]
    DimensionMismatch {
        row: usize,
        expected: usize,
        found: usize,
    },

    #[error("row {row}: expected index {expected}, found {found}")]
    IndexMismatch {
        row: usize,
        expected: usize,
        found: usize,
    },

    #[error("embedding file has {file_rows} rows but dataset has {dataset_rows} samples")]
    RowCountMismatch {
        file_rows: usize,
        dataset_rows: usize,
    },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("no positive or negative pairs available")]
    NoPairs,

    #[error("AUC is undefined when only one class is present")]
    DegenerateAuc,

    #[error("unknown artifact format version {0}")]
    UnknownVersion(u64),

    #[error("malformed artifact: {0}")]
    MalformedArtifact(String),

    #[error("remote service error: {0}")]
    Remote(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

fn line_prefix(line: Option<usize>) -> String {
    match line {
        Some(n) => format!("line {n}: "),
        None => String::new(),
    }
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Io { .. } => ErrorKind::Io,
            Error::Remote(_) | Error::GenerationFailed { .. } => ErrorKind::Remote,
            _ => ErrorKind::Validation,
        }
    }
}
