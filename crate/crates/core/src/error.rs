use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("EmptyVocabulary: no token reaches min_count")]
    EmptyVocabulary,

    #[error("InsufficientGeneralPlots: requested {requested} general documents but only {available} are available")]
    InsufficientGeneralPlots { requested: usize, available: usize },

    #[error("MalformedSrt: block starting at line {line} has no timestamp line (found {found:?})")]
    MalformedSrt { line: usize, found: String },

    #[error("InvalidConfig: {0}")]
    InvalidConfig(String),

    #[error("FormatError at line {line}: {msg}")]
    Format { line: usize, msg: String },

    #[error("DuplicateToken: {token:?} repeated at line {line}")]
    DuplicateToken { token: String, line: usize },

    #[error("InvalidItem at line {line}: {msg}")]
    InvalidItem { line: usize, msg: String },

    #[error("MissingLabel: item {qid:?} has no correct_index")]
    MissingLabel { qid: String },

    #[error("NoTrainableItems: every training item is degenerate")]
    NoTrainableItems,

    #[error("NotUntrained: reweighting matrix deviates from identity by {max_deviation:e}")]
    NotUntrained { max_deviation: f64 },

    #[error("DimensionMismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("EmptyItems: {0}")]
    EmptyItems(&'static str),

    #[error("{path}: {source}")]
    InFile {
        path: PathBuf,
        #[source]
        source: Box<Error>,
    },

    #[error("cell {cell:?}: {source}")]
    Cell {
        cell: String,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("JSON error at line {line}: {source}")]
    Json {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub fn in_file(self, path: impl Into<PathBuf>) -> Error {
        match self {
            // already annotated with its own path
            e @ (Error::Io { .. } | Error::InFile { .. }) => e,
            e => Error::InFile {
                path: path.into(),
                source: Box::new(e),
            },
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Error {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// The innermost error, with file/cell annotations peeled away.
    pub fn root(&self) -> &Error {
        match self {
            Error::InFile { source, .. } | Error::Cell { source, .. } => source.root(),
            e => e,
        }
    }
}
