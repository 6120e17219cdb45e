use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// The data do not determine the requested estimate.
    #[error("estimation error: {0}")]
    Estimation(String),

    /// Two objects that must agree on their binning or shape do not.
    #[error("configuration mismatch: {0}")]
    ConfigMismatch(String),

    /// Training produced a non-finite loss.
    #[error("training diverged: {0}")]
    Divergence(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}
