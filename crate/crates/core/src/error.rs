use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the clustering pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("no series: input contained no valid readings")]
    NoSeries,

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("meter {meter_id}: invalid value at index {index}: {value}")]
    InvalidValue {
        meter_id: String,
        index: usize,
        value: f64,
    },

    #[error("series of length {len} is too short (need more than {needed})")]
    SeriesTooShort { len: usize, needed: usize },

    #[error("degenerate series: {0}")]
    Degenerate(String),

    #[error("too few complete pairs at lag {lag}: {pairs} (need {needed})")]
    TooFewPairs {
        lag: usize,
        pairs: usize,
        needed: usize,
    },

    #[error("near-singular Durbin-Levinson recursion at lag {lag}")]
    NearSingular { lag: usize },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("mixed feature kinds: {0} and {1}")]
    MixedKinds(String, String),

    #[error("non-finite dissimilarity at condensed index {0}")]
    NonFinite(usize),

    #[error("missing external label for meters: {}", .0.join(", "))]
    MissingLabels(Vec<String>),

    #[error("malformed matrix file {path}: {reason}")]
    MatrixFormat { path: PathBuf, reason: String },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
