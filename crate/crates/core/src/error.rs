use thiserror::Error;

/// Errors raised across the navigation stack.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument is outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),
    /// A configuration value or combination of values is invalid.
    #[error("configuration error: {0}")]
    Config(String),
    /// Malformed runtime input (shape mismatch, non-finite values).
    #[error("invalid input: {0}")]
    Input(String),
    /// An API was used out of order, e.g. stepping a terminated environment.
    #[error("usage error: {0}")]
    Usage(String),
    /// A file on disk carries an unexpected schema or version.
    #[error("schema error: {0}")]
    Schema(String),
    /// Numerical or training failure.
    #[error("runtime failure: {0}")]
    Runtime(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code for the command-line front end.
    ///
    /// 1 = usage, 2 = configuration, 3 = runtime failure.
    pub fn exit_code(&self) -> u8 {
        match self {
            Error::Usage(_) | Error::Domain(_) | Error::Input(_) => 1,
            Error::Config(_) | Error::Schema(_) => 2,
            Error::Runtime(_) | Error::Io(_) | Error::Json(_) => 3,
        }
    }
}

pub(crate) fn ensure_finite(values: &[f64], what: &str) -> Result<()> {
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::Input(format!("{what}[{i}] is not finite")));
    }
    Ok(())
}
