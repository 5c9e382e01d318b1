use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at position {position}: {message}")]
    Parse { position: usize, message: String },

    #[error("invalid residue '{letter}' at position {position}")]
    InvalidResidue { letter: char, position: usize },

    #[error("unknown amino-acid code '{0}'")]
    UnknownAminoAcid(String),

    #[error("invalid design: {0}")]
    InvalidDesign(String),

    #[error("rejected input: {0}")]
    Rejected(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("invariant violation: {0}")]
    Invariant(String),

    #[error("illegal action {action} at fill position {position}")]
    IllegalAction { action: usize, position: usize },

    #[error("state at the source has no parent")]
    NoParent,

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("computation graph was already consumed by a backward pass")]
    GraphConsumed,

    #[error("design space has {size} designs, above the enumeration cap {cap}")]
    CapExceeded { size: String, cap: u64 },

    #[error("top-k needs {requested} unique samples but only {available} are available")]
    NotEnoughSamples { requested: usize, available: usize },

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("support mismatch: {extra} extra and {missing} missing designs ({detail})")]
    SupportMismatch {
        extra: usize,
        missing: usize,
        detail: String,
    },

    #[error("external scorer failed: {0}")]
    ExternalScorer(String),

    #[error("{path}: line {line}: {message}")]
    Record {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
