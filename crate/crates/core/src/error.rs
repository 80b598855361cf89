use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("k-core filter with k={k} removed every interaction")]
    EmptyAfterFilter { k: usize },
    #[error("user {user} has {len} interactions, need at least 3 for a leave-one-out split")]
    ShortSequence { user: String, len: usize },
    #[error("sequence prefix is empty")]
    EmptyPrefix,
    #[error("item {item} is out of range for {n_items} items")]
    ItemOutOfRange { item: u32, n_items: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("no eligible negative item: user owns all {n_items} items")]
    NoNegative { n_items: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("malformed artifact {path}: {message}")]
    Artifact { path: PathBuf, message: String },
    #[error("artifact lineage mismatch for {artifact}: expected config hash {expected}, found {found}")]
    Lineage {
        artifact: String,
        expected: String,
        found: String,
    },
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("empty input: {0}")]
    Empty(&'static str),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn artifact(path: impl Into<PathBuf>, message: impl ToString) -> Self {
        Error::Artifact {
            path: path.into(),
            message: message.to_string(),
        }
    }

    /// Process exit code used by the CLI: 2 config, 3 data, 4 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Lineage { .. } => 2,
            Error::Numeric(_) => 4,
            _ => 3,
        }
    }
}
