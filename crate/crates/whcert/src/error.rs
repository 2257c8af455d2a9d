//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid constraint K({r}, {s}): need 1 <= r <= s")]
    InvalidConstraint { r: u32, s: u32 },

    #[error("loss word must start with a delivered packet")]
    WordStartsWithLoss,

    #[error("loss word violates K({r}, {s})")]
    WordViolatesConstraint { r: u32, s: u32 },

    #[error("horizon {got} exceeds cap {cap}")]
    HorizonTooLarge { got: u32, cap: u32 },

    #[error("horizon {got} below minimum {min} for this check")]
    HorizonTooSmall { got: u32, min: u32 },

    #[error("word rejected: {0}")]
    WordRejected(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("polynomial degree {got} exceeds cap {cap}")]
    DegreeOverflow { got: usize, cap: usize },

    #[error("config error at {path}: {msg}")]
    Config { path: String, msg: String },

    #[error("unsupported variant: {0}")]
    UnsupportedVariant(String),

    #[error("controller required but absent in problem")]
    ControllerMissing,

    #[error("solver failure: {0}")]
    Solver(String),

    #[error("certificate mismatch: {0}")]
    CertMismatch(String),

    #[error("unknown node name {0}")]
    UnknownNode(String),

    #[error("{0}")]
    Other(String),
}

impl Error {
    /// Errors caused by a malformed problem or schedule file.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::Config { .. }
                | Error::InvalidConstraint { .. }
                | Error::DimensionMismatch(_)
                | Error::ControllerMissing
        )
    }
}
