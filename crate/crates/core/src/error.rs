use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid parameters: {0}")]
    InvalidGrid(String),

    #[error("{what} index {index} out of range (len {len})")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        len: usize,
    },

    #[error("invalid permeability field: {0}")]
    InvalidField(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("degenerate cell: {0}")]
    DegenerateCell(String),

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("requested {requested} eigenpairs but the snapshot space of node {node} has dimension {available}")]
    SnapshotTooSmall {
        node: usize,
        requested: usize,
        available: usize,
    },

    #[error("coarse node {0} does not lie on the contact boundary")]
    NotContactNode(usize),

    #[error("constraint row {0} has no nonzero entries")]
    ZeroConstraintRow(usize),

    #[error("singular saddle-point system: {0}")]
    SingularSaddle(String),

    #[error("eigensolver failed: {0}")]
    Eigen(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("parse error in {path}: {msg}")]
    Parse { path: PathBuf, msg: String },

    #[error("i/o error on {path}: {source}")]
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
