//! Error types shared across the crate.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Problem-file or potential-file syntax errors, with 1-based line numbers.
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    /// A tree failed validation; the violations name the failing invariants.
    #[error("invalid tree: {0:?}")]
    Validate(Vec<String>),

    /// An operation was called outside its contract.
    #[error("precondition violated: {0}")]
    Precondition(String),

    /// A runtime assumption check failed (distinctness, nonvanishing, ...).
    #[error("assumption {which} violated: {detail}")]
    Assumption { which: &'static str, detail: String },

    /// Root-to-branch assignment could not be made reliably.
    #[error("numbering unreliable: {0}")]
    NumberingUnreliable(String),

    /// The unknown subtree branches in a way the peeling pipeline cannot reduce.
    #[error("branching requires auxiliary subspectra: {0}")]
    Branching(String),

    /// The least-squares fit stagnated above its misfit target.
    #[error("optimizer stagnation in {stage}: best misfit {misfit:.3e}")]
    Optim { stage: String, misfit: f64 },

    #[error("insufficient subspectrum: {0}")]
    InsufficientSubspectrum(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    /// Invariant that should be unreachable; indicates a bug upstream.
    #[error("internal error: {0}")]
    Internal(String),
}

impl Error {
    /// Short machine-parsable code, stable across releases.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Parse { .. } => "E_PARSE",
            Error::Validate(_) => "E_VALIDATE",
            Error::Precondition(_) => "E_PRECONDITION",
            Error::Assumption { .. } => "E_ASSUMPTION",
            Error::NumberingUnreliable(_) => "E_NUMBERING",
            Error::Branching(_) => "E_BRANCHING",
            Error::Optim { .. } => "E_OPTIM",
            Error::InsufficientSubspectrum(_) => "E_SUBSPECTRUM",
            Error::Io(_) => "E_IO",
            Error::Internal(_) => "E_INTERNAL",
        }
    }
}
