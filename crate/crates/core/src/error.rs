use std::path::PathBuf;

use crate::types::PathRecord;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("empty dataset: {0}")]
    EmptyDataset(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("lifecycle error: path {query_id}/{path_id} is {status}, expected {expected}")]
    Lifecycle {
        query_id: String,
        path_id: u32,
        status: String,
        expected: &'static str,
    },

    #[error("division by zero: {0}")]
    DivisionByZero(&'static str),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("collinear design: regressor `{0}` has no independent variation")]
    Collinear(String),

    #[error("transport error (retryable after {attempts} attempts): {message}")]
    Transport { attempts: u32, message: String },

    #[error("endpoint {endpoint} does not provide {missing}")]
    Capability { endpoint: String, missing: String },

    #[error("context length exceeded at {endpoint}; partial record preserved ({} tokens)", partial.tokens.len())]
    Truncation {
        endpoint: String,
        partial: Box<PathRecord>,
    },

    #[error("endpoint error: {0}")]
    Endpoint(String),

    #[error("missing upstream artifact {}: {hint}", path.display())]
    MissingArtifact { path: PathBuf, hint: String },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: line {line}: {source}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        #[source]
        source: serde_json::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
