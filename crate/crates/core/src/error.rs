use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("graph contains a directed cycle")]
    Cyclic,

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    // Wrapping variants carry the inner error in their message, so they do
    // not expose it as `source()` as well.
    #[error("node {node}: {inner}")]
    AtNode { node: usize, inner: Box<Error> },

    #[error("pair ({i}, {j}): {inner}")]
    AtPair { i: usize, j: usize, inner: Box<Error> },

    #[error("{path}: row {row}, column {column}: {message}")]
    CsvCell {
        path: PathBuf,
        row: usize,
        column: String,
        message: String,
    },

    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("{path}: {cause}")]
    Io { path: PathBuf, cause: std::io::Error },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, cause: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            cause,
        }
    }

    pub(crate) fn at_node(self, node: usize) -> Self {
        Error::AtNode {
            node,
            inner: Box::new(self),
        }
    }

    pub(crate) fn at_pair(self, i: usize, j: usize) -> Self {
        Error::AtPair {
            i,
            j,
            inner: Box::new(self),
        }
    }
}
