//! Error types shared by all subsystems.

use thiserror::Error;

/// Top-level error for all library operations.
///
/// The variants map onto the CLI exit-code contract: [`Error::is_domain`]
/// errors exit with status 2, numerical failures with status 3.
#[derive(Debug, Error)]
pub enum Error {
    /// Arguments outside the configured domains, malformed configs,
    /// violated preconditions.
    #[error("domain error: {0}")]
    Domain(String),

    /// Quadrature, root finding or fixed-point iteration failed to reach
    /// the requested tolerance.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// A run-level plan could not be carried out (segment aborts,
    /// corridor never entered, vague point detected, ...). Carries
    /// diagnostics assembled by the caller.
    #[error("run failure: {0}")]
    Run(String),
}

impl Error {
    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }

    pub fn run(msg: impl Into<String>) -> Self {
        Error::Run(msg.into())
    }

    /// True for validation/domain errors (CLI exit code 2).
    pub fn is_domain(&self) -> bool {
        matches!(self, Error::Domain(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
