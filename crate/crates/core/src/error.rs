use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("index {index} out of range (limit {limit})")]
    IndexOutOfRange { index: usize, limit: usize },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("{what} has {size} states, exceeding the enumeration limit {limit}")]
    TooLarge {
        what: &'static str,
        size: u128,
        limit: u128,
    },

    #[error("integration failed at t = {time:.6e} s: {reason}")]
    Integration { time: f64, reason: String },

    #[error("sampler produced no feasible candidate after {rounds} rounds")]
    NoFeasibleCandidate { rounds: usize },

    #[error("step {step} failed: {source}")]
    Step {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("undefined coefficient of determination: predictions are constant")]
    ConstantPredictions,

    #[error("parse error on line {line}: {message}")]
    Parse { line: usize, message: String },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn ensure_len(expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, actual })
    }
}
