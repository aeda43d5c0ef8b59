use std::path::PathBuf;

use anim3d_numerics::NumericsError;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, CoreError>;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("schema error in field `{field}`: {msg}")]
    Schema { field: String, msg: String },
    #[error("validation failed for `{field}`: {msg}")]
    Validation { field: String, msg: String },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("unsupported loss term `{0}`: its weight must be 0")]
    UnsupportedTerm(&'static str),
    #[error("no valid frames for emotion `{0}`")]
    EmptyTemplate(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

impl CoreError {
    pub fn arg(msg: impl Into<String>) -> Self {
        CoreError::Argument(msg.into())
    }

    pub fn schema(field: impl Into<String>, msg: impl Into<String>) -> Self {
        CoreError::Schema {
            field: field.into(),
            msg: msg.into(),
        }
    }

    pub fn invalid(field: impl Into<String>, msg: impl Into<String>) -> Self {
        CoreError::Validation {
            field: field.into(),
            msg: msg.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CoreError::Io {
            path: path.into(),
            source,
        }
    }
}
