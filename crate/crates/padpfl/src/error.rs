//! Error types shared across the crate.

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// A scalar parameter is outside its admissible range.
    #[error("invalid parameter `{name}`: {message}")]
    InvalidParameter { name: &'static str, message: String },

    /// An impact factor lies outside [0, 1].
    #[error("impact factor {value} for client {client}{} is outside [0, 1]", fmt_round(.round))]
    ImpactOutOfRange {
        round: Option<usize>,
        client: usize,
        value: f64,
    },

    /// A row of impact factors does not sum to 1 within tolerance.
    #[error("impact factors sum to {sum}{}, expected 1 within 1e-9", fmt_round(.round))]
    ImpactSumMismatch { round: Option<usize>, sum: f64 },

    /// Piecewise schedule segments overlap, leave gaps, or are unordered.
    #[error("invalid schedule segments: {0}")]
    InvalidSegments(String),

    /// A round index fell outside the schedule.
    #[error("round {round} out of range for a schedule of {rounds} rounds")]
    RoundOutOfRange { round: usize, rounds: usize },

    /// Vector or matrix dimensions disagree.
    #[error("dimension mismatch in {what}: expected {expected}, got {actual}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    /// The global gradient vanished where a formula divides by its norm.
    #[error("global gradient norm is zero; dissimilarity is undefined at this point")]
    ZeroGradient,

    /// Local training produced a non-finite loss or parameter.
    #[error("training diverged (non-finite value) at epoch {epoch}{}", fmt_round(.round))]
    Divergence { round: Option<usize>, epoch: usize },

    /// A dataset file is malformed.
    #[error("bad data file {path}: {message}")]
    Format { path: String, message: String },

    /// A partition requested more samples than the dataset holds.
    #[error("partition requests {requested} samples but only {available} are available")]
    InsufficientSamples { requested: usize, available: usize },

    /// A configuration field failed validation.
    #[error("config field `{field}`: {message}")]
    Config { field: String, message: String },

    /// A run trace is empty or lacks the snapshots an estimator needs.
    #[error("run trace is insufficient: {0}")]
    InsufficientTrace(String),

    #[error("config parse error: {0}")]
    Parse(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn fmt_round(round: &Option<usize>) -> String {
    match round {
        Some(r) => format!(" (round {r})"),
        None => String::new(),
    }
}

pub type Result<T> = std::result::Result<T, Error>;
