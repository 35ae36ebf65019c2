use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid quaternion ({0}, {1}, {2}, {3}): norm must be finite and nonzero")]
    InvalidQuaternion(f64, f64, f64, f64),

    #[error("unknown symmetry group `{name}`; valid names: {}", valid.join(", "))]
    UnknownGroup { name: String, valid: Vec<&'static str> },

    #[error("invalid symmetry group `{name}`: {reason}")]
    InvalidGroup { name: String, reason: String },

    /// A concentration coordinate (1-based `lambda` index) outside the supported range.
    #[error("lambda_{coordinate} = {value} is outside the supported range [{min}, {max}]")]
    Range {
        coordinate: usize,
        value: f64,
        min: f64,
        max: f64,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{}:{line}: {message}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("malformed normalizer table: {0}")]
    Table(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
