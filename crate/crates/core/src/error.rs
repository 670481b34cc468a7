use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("plaintext space too small: need a modulus above 2^{required_bits}, a {security_bits}-bit key gives at most 2^{available_bits}")]
    PlaintextSpaceTooSmall {
        security_bits: u32,
        required_bits: u32,
        available_bits: u32,
    },

    #[error("key mismatch: ciphertext bound to key {found:016x}, expected {expected:016x}")]
    KeyMismatch { expected: u64, found: u64 },

    #[error("plaintext {0} is outside the plaintext space")]
    PlaintextOutOfRange(String),

    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("codec mismatch between combined vectors")]
    CodecMismatch,

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("degenerate weights: weight sum is zero")]
    DegenerateWeights,

    #[error("mix weight {value} for client {index} is outside [0, 1]")]
    MixWeightOutOfRange { index: usize, value: f64 },

    #[error("client {index} is missing its {part} update")]
    MissingUpdatePart { index: usize, part: &'static str },

    #[error("invalid configuration `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error("stale or missing network samples for platform(s): {}", .0.join(", "))]
    StaleSamples(Vec<String>),

    #[error("{path}:{line}: {reason}")]
    Parse {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("{path}:{line}: {reason}")]
    Validation {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("malformed wire payload: {0}")]
    Wire(String),

    #[error("attack unsupported for this task: {0}")]
    UnsupportedTask(String),

    #[error("refusing to overwrite existing file {0} (pass --force)")]
    WouldOverwrite(PathBuf),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }

    /// Whether the error stems from user input (bad flags, config or input files)
    /// rather than a failure while running.
    pub fn is_usage(&self) -> bool {
        matches!(
            self,
            Error::Config { .. }
                | Error::Parse { .. }
                | Error::Validation { .. }
                | Error::PlaintextSpaceTooSmall { .. }
                | Error::StaleSamples(_)
                | Error::UnsupportedTask(_)
                | Error::WouldOverwrite(_)
        )
    }
}
