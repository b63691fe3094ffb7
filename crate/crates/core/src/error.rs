use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not positive definite (pivot {pivot} = {value:e})")]
    NotPositiveDefinite { pivot: usize, value: f64 },

    #[error("matrix is not symmetric at ({row}, {col})")]
    NotSymmetric { row: usize, col: usize },

    #[error("argument outside the function domain: {0}")]
    Domain(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid index set: {0}")]
    InvalidIndexSet(String),

    #[error("parse error at row {row}, column {column}: {message}")]
    Parse {
        row: usize,
        column: usize,
        message: String,
    },

    #[error("dataset has no observation rows")]
    EmptyData,

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("invalid prior: {0}")]
    InvalidPrior(String),

    #[error("node {node} cannot be its own parent")]
    InvalidFamily { node: usize },

    #[error("graph contains a directed cycle")]
    CyclicGraph,

    #[error("illegal move: {0}")]
    IllegalMove(String),

    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("unknown node name `{0}`")]
    UnknownNode(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
