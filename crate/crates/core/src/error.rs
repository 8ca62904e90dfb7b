//! Error taxonomy shared by every module.
//!
//! The variants map onto how callers must react: `Config` means the user
//! wrote a bad key or value (CLI exit 1), everything else is a runtime
//! failure (CLI exit 2). `Degenerate` marks inputs that are formally valid
//! but carry no usable information for the requested operation, so Monte
//! Carlo drivers record it per trial instead of aborting the run.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Input violates a structural requirement (e.g. a matrix that is not
    /// Hermitian within tolerance).
    #[error("structural error: {0}")]
    Structural(String),

    /// Input is outside the mathematical domain of the operation
    /// (e.g. an indefinite matrix passed to a square root).
    #[error("domain error: {0}")]
    Domain(String),

    /// Input is degenerate for this estimator (e.g. a zero super-diagonal
    /// entry, or a spectrum with a root pinned to the unit circle).
    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// An internal consistency check failed; indicates a bug or severe
    /// numerical breakdown, never an expected user-facing condition.
    #[error("internal error: {0}")]
    Internal(String),

    /// Bad configuration key, value, or combination.
    #[error("config error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// CLI exit code convention: 1 for configuration problems, 2 for
    /// runtime failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 1,
            _ => 2,
        }
    }
}
