//! Error type shared by every module of the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid mesh, time step, or experiment parameters.
    #[error("configuration error: {0}")]
    Config(String),

    /// Input fields that violate a structural requirement (boundary values, lengths).
    #[error("data error: {0}")]
    Data(String),

    /// Principal coefficient matrix is asymmetric or not positive definite.
    #[error("invalid principal field: {0}")]
    InvalidField(String),

    /// Argument outside the domain of an evaluator, e.g. a time outside `[0, T]`.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("unsupported mode: {0}")]
    Unsupported(String),

    /// A quotient whose denominator vanishes.
    #[error("undefined ratio: {0}")]
    UndefinedRatio(String),

    #[error("manufactured input error: {0}")]
    ManufacturedInput(String),

    #[error("empty study: {0}")]
    EmptyStudy(String),

    #[error("construction error: {0}")]
    Construction(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    /// A property that must hold for every valid run did not.
    #[error("invariant violation: {0}")]
    Invariant(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn config<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Config(msg.into()))
}
