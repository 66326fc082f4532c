//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// Malformed input that could not be decoded at all.
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    /// Input decoded but violates a data invariant (non-finite values,
    /// dimensions too small, inconsistent counts).
    #[error("data error: {0}")]
    Data(String),

    #[error("config error: field `{field}`: {msg}")]
    Config { field: String, msg: String },

    /// A constant signal vector has no defined Pearson correlation.
    #[error("degenerate signal: constant vector has no defined correlation")]
    DegenerateSignal,

    /// A walk step had an empty candidate set.
    #[error("no neighbor candidates")]
    NoNeighbor,

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("index error: {0}")]
    Index(String),

    /// Negative sampling failed to find a verified absent hyperedge.
    #[error("negative sampling exhausted after {attempts} attempts")]
    NegativeExhausted { attempts: usize },

    /// Training produced a non-finite loss; carries the last finite model.
    #[error("training diverged during {stage} epoch {epoch}: non-finite loss")]
    TrainingDiverged {
        stage: &'static str,
        epoch: usize,
        last_good: Box<crate::encoder::ScorerModel>,
    },

    #[error("evaluation error: {0}")]
    Eval(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn config(field: &str, msg: impl Into<String>) -> Self {
        Error::Config { field: field.to_string(), msg: msg.into() }
    }

    pub fn parse(line: usize, msg: impl Into<String>) -> Self {
        Error::Parse { line, msg: msg.into() }
    }
}
