use thiserror::Error;

/// Crate-wide error type.
///
/// `InvalidArgument` and `Config` map to process exit code 1, everything
/// numeric maps to exit code 2 (see [`crate::runner`]).
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Configuration validation failure; `field` is the dotted path of the
    /// offending entry, e.g. `monte_carlo.n_paths`.
    #[error("config: {field}: {message}")]
    Config { field: String, message: String },

    #[error("numeric failure: {0}")]
    Numeric(String),

    /// Picard iteration exhausted `max_iter` without meeting the tolerance,
    /// signalling non-contraction at the current discretization.
    #[error("picard iteration did not converge: gap {gap:.3e} after {iterations} iterations")]
    PicardDiverged { iterations: usize, gap: f64 },

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }

    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }
}
