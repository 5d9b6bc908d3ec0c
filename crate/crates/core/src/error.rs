use thiserror::Error;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("invalid dataset: {0}")]
    InvalidDataset(String),
    #[error("invalid generation spec: {0}")]
    InvalidSpec(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("infeasible proportions (bag {bag:?}, class {class}): {reason}")]
    Infeasible {
        bag: Option<usize>,
        class: usize,
        reason: String,
    },
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("ill-conditioned problem: {0}")]
    IllConditioned(String),
    #[error("degenerate test: {0}")]
    DegenerateTest(String),
    #[error("bag {0} is empty")]
    EmptyBag(usize),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
}

pub type Result<T> = std::result::Result<T, Error>;
