use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    /// The conditional variance vanishes at `t` (scores and samples are undefined).
    #[error("degenerate variance at t = {t}")]
    DegenerateVariance { t: f64 },

    #[error("numerical failure at t = {t}: {what}")]
    NumericalFailure { t: f64, what: String },

    #[error("invalid alignment: {0}")]
    InvalidAlignment(String),

    #[error("no monotonic surjective alignment of {frames} frames onto {tokens} tokens")]
    NoAlignment { tokens: usize, frames: usize },

    #[error("brute-force enumeration refused: {candidates} candidates exceed cap {cap}")]
    EnumerationCap { candidates: u128, cap: u128 },

    #[error("token id {id} outside vocabulary of size {vocab}")]
    UnknownToken { id: usize, vocab: usize },

    #[error("config error: {0}")]
    Config(String),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(what: impl Into<String>) -> Self {
        Error::Shape(what.into())
    }

    pub(crate) fn domain(what: impl Into<String>) -> Self {
        Error::Domain(what.into())
    }
}

pub(crate) fn check_len(what: &str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::shape(format!("{what}: expected length {expected}, got {got}")));
    }
    Ok(())
}
