use std::io;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("noise realizations have {have} samples, window needs {need}")]
    WindowTooShort { have: usize, need: usize },

    #[error("need at least {need} noise realizations, got {have}")]
    TooFewRealizations { have: usize, need: usize },

    #[error("PSD table ends at {max_freq} Hz, below the Nyquist frequency {nyquist} Hz")]
    PsdRange { max_freq: f64, nyquist: f64 },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("frequencies not strictly increasing at line {line}")]
    NonMonotoneFreq { line: usize },

    #[error("least-squares fit did not converge: {0}")]
    FitDiverged(String),

    #[error("periodogram peak is not distinct (peak/median power = {ratio:.3})")]
    AmbiguousFrequency { ratio: f64 },

    #[error("trace has {have} samples but the grid expects {want}")]
    GridMismatch { have: usize, want: usize },

    #[error("trace length {have} exceeds the brute-force limit {max}")]
    TraceTooLong { have: usize, max: usize },

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("dataset labels are {found:?} but regime {regime} requires {required:?}")]
    ProvenanceMismatch {
        regime: String,
        found: crate::signal::Provenance,
        required: crate::signal::Provenance,
    },

    #[error("loss became non-finite at epoch {epoch}, step {step}: {detail}")]
    NonFiniteLoss {
        epoch: usize,
        step: usize,
        detail: String,
    },

    #[error("probability {value} at drive time {time} outside [0, 1]")]
    ProbabilityRange { time: f64, value: f64 },

    #[error("unsupported file version {found} (expected {expected})")]
    VersionMismatch { found: u8, expected: u8 },

    #[error("bad magic bytes, expected {expected}")]
    BadMagic { expected: &'static str },

    #[error("checksum or length check failed: {0}")]
    ChecksumFail(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("malformed metadata: {0}")]
    Metadata(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    /// Stable machine-readable tag, used by the CLI's error JSON.
    pub fn code(&self) -> &'static str {
        match self {
            Error::InvalidParameter { .. } => "INVALID_PARAMETER",
            Error::WindowTooShort { .. } => "WINDOW_TOO_SHORT",
            Error::TooFewRealizations { .. } => "TOO_FEW_REALIZATIONS",
            Error::PsdRange { .. } => "PSD_RANGE",
            Error::Parse { .. } => "PARSE_ERROR",
            Error::NonMonotoneFreq { .. } => "NON_MONOTONE_FREQ",
            Error::FitDiverged(_) => "FIT_DIVERGED",
            Error::AmbiguousFrequency { .. } => "AMBIGUOUS_FREQUENCY",
            Error::GridMismatch { .. } => "GRID_MISMATCH",
            Error::TraceTooLong { .. } => "TRACE_TOO_LONG",
            Error::LengthMismatch { .. } => "LENGTH_MISMATCH",
            Error::ShapeMismatch(_) => "SHAPE_MISMATCH",
            Error::ProvenanceMismatch { .. } => "PROVENANCE_MISMATCH",
            Error::NonFiniteLoss { .. } => "NON_FINITE_LOSS",
            Error::ProbabilityRange { .. } => "PROBABILITY_RANGE",
            Error::VersionMismatch { .. } => "VERSION_MISMATCH",
            Error::BadMagic { .. } => "BAD_MAGIC",
            Error::ChecksumFail(_) => "CHECKSUM_FAIL",
            Error::Empty(_) => "EMPTY_INPUT",
            Error::Metadata(_) => "METADATA",
            Error::Io(_) => "IO",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
