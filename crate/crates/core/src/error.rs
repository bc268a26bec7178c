use thiserror::Error;

/// Errors raised by the model, estimation, and I/O layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("parameter out of domain: {0}")]
    Domain(String),

    #[error("spectra list covers i <= {available} but the sum needs i <= {required}")]
    TruncationInsufficient { available: usize, required: usize },

    #[error("inconsistent data: {0}")]
    Inconsistent(String),

    #[error("indeterminate: {0}")]
    Indeterminate(String),

    #[error("underdetermined fit: {0}")]
    Underdetermined(String),

    #[error("fit failed after {iterations} iterations: {reason} (last chi2 = {chi2:.6e})")]
    FitFailure {
        iterations: usize,
        chi2: f64,
        reason: String,
    },

    #[error("config error at line {line}: {message}")]
    Config { line: usize, message: String },

    #[error("malformed input file {path}: {message}")]
    Format { path: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}
