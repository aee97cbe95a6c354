use std::io;

/// Errors produced by the face model, renderer, corpus, regressor and breeding stages.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid model spec: {0}")]
    InvalidSpec(String),

    #[error("invalid camera: {0}")]
    InvalidCamera(String),

    #[error("invalid prior: {0}")]
    InvalidPrior(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("dimension mismatch for {what}: expected {expected}, got {actual}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("normal is not unit length (|n| = {0})")]
    NonUnitNormal(f64),

    #[error("point at or behind the camera plane (z = {0} mm)")]
    BehindCamera(f64),

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },

    #[error("unsupported {format} version {found}")]
    UnsupportedVersion { format: &'static str, found: u32 },

    #[error("truncated {0} data")]
    Truncated(&'static str),

    #[error("malformed {format}: {reason}")]
    Malformed {
        format: &'static str,
        reason: String,
    },

    #[error("input mask is empty")]
    EmptyMask,

    #[error("corpus is empty")]
    EmptyCorpus,

    #[error("non-finite gradient in parameter tensor {0}")]
    NonFiniteGradient(usize),

    #[error("regressor has {iterations} training iterations; breeding requires a warm-up of {required}")]
    NotWarmedUp { iterations: u64, required: usize },

    #[error("breeding round {round} produced a non-finite loss")]
    NonFiniteLoss { round: usize },

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn mismatch(what: &'static str, expected: usize, actual: usize) -> Self {
        Error::DimensionMismatch {
            what,
            expected,
            actual,
        }
    }
}
