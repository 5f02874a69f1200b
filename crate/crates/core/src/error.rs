use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the estimator, analysis, simulation and harness layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dimension {0}: need d >= 2")]
    InvalidDimension(usize),

    #[error("degenerate iterate: vector has zero norm")]
    DegenerateIterate,

    #[error("invalid batch: {0}")]
    InvalidBatch(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("non-finite value produced by update (step size {gamma})")]
    NumericOverflow { gamma: f64 },

    #[error("unsupported regime: requires c0 > 2 (got c0 = {c0})")]
    UnsupportedRegime { c0: f64 },

    #[error("parameter out of domain: {0}")]
    Domain(String),

    #[error("system model inconsistent: {0}")]
    ModelInconsistency(String),

    #[error("index out of range: {0}")]
    IndexOutOfRange(String),

    #[error("expected {expected} samples, got {got}")]
    SampleCount { expected: usize, got: usize },

    #[error(
        "stream exhausted after {received} samples ({processed} processed, {discarded} discarded)"
    )]
    EndOfStream {
        received: u64,
        processed: u64,
        discarded: u64,
    },

    #[error(
        "power iteration did not converge after {iterations} iterations (residual {residual:e})"
    )]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("need at least {needed} points in the fit window, found {found}")]
    InsufficientPoints { needed: usize, found: usize },

    #[error("data format error in {path}: {msg}")]
    DataFormat { path: PathBuf, msg: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
