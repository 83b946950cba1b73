use thiserror::Error;

/// Errors raised by the inference engine.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("node {node} out of range for a graph on {q} nodes")]
    NodeOutOfRange { node: usize, q: usize },

    #[error("graphs on more than {max} nodes are not supported (got {q})")]
    TooManyNodes { q: usize, max: usize },

    #[error("invalid move {0}")]
    InvalidMove(String),

    #[error("matrix block for node {node} is not positive definite")]
    NotPositiveDefinite { node: usize },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("stick-breaking extension exceeded the cap of {cap} components")]
    StickCapExceeded { cap: usize },

    #[error("internal invariant violated: {0}")]
    Invariant(String),

    #[error("iteration {iteration}: {source}")]
    AtIteration {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },
}

pub type Result<T> = std::result::Result<T, Error>;
