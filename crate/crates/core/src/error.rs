use thiserror::Error;

use crate::config::ConfigError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A physical parameter or geometry violates its invariants.
    #[error("invalid {what}: {reason}")]
    InvalidParameter { what: &'static str, reason: String },

    /// The discrete energy matrix (or a per-cell block of it) is not positive definite.
    #[error("energy matrix not positive definite: {what} (normalised margin {margin:.3e})")]
    NotPositiveDefinite { what: String, margin: f64 },

    /// Model kind, electromagnetic assumption and actuation do not fit together.
    #[error("unsupported model combination: {0}")]
    UnsupportedModel(String),

    #[error("controller {law} cannot drive a {system} system")]
    IncompatibleController { law: String, system: String },

    /// The control law is undefined for these coefficients (e.g. a zero port gain).
    #[error("control law undefined: {0}")]
    UndefinedLaw(String),

    #[error("singular linear system in {context} (reciprocal condition estimate {rcond:.3e})")]
    Singular { context: &'static str, rcond: f64 },

    #[error("step size {step:.3e} s at t = {time:.6} s fell below the minimum without meeting tolerance")]
    ToleranceNotMet { time: f64, step: f64 },

    #[error("system has no {0} labels; cannot reconstruct fields")]
    MissingLabels(&'static str),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error(transparent)]
    Config(#[from] ConfigError),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(what: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            what,
            reason: reason.into(),
        }
    }
}
