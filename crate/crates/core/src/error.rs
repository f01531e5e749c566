use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("fewer than 2 observations (got {0})")]
    TooFewObservations(usize),

    #[error("{path}: line {line}, column {column}: cannot parse {token:?} as a number")]
    Parse {
        path: PathBuf,
        line: usize,
        column: usize,
        token: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// |φ̂(u)| fell below the integration floor inside the requested range.
    #[error("|phi_hat(u)| = {modulus:.3e} below floor {floor:.3e} at u = {u}")]
    DenominatorTooSmall { u: f64, modulus: f64, floor: f64 },

    #[error("cutoff m = {m} exceeds the available frequency range [0, {max}]")]
    CutoffExceedsRange { m: f64, max: f64 },

    #[error("|phi_X(u)|^K never reaches level {level:.3e} for u <= {limit:e}")]
    LevelNotReached { level: f64, limit: f64 },

    #[error("{context}: {source}")]
    Scenario {
        context: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }

    pub fn with_context(self, context: impl Into<String>) -> Self {
        Error::Scenario {
            context: context.into(),
            source: Box::new(self),
        }
    }

    /// Innermost error, skipping scenario context wrappers.
    pub fn root_cause(&self) -> &Error {
        match self {
            Error::Scenario { source, .. } => source.root_cause(),
            other => other,
        }
    }
}
