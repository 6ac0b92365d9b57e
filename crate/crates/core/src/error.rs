use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid image: {0}")]
    InvalidImage(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error(
        "bayer processing needs 3 channels and even dimensions, got {channels}x{height}x{width}"
    )]
    BayerShape {
        channels: usize,
        height: usize,
        width: usize,
    },

    #[error("duplicate parameter path `{0}`")]
    DuplicateParameter(String),

    #[error("missing parameter `{0}`")]
    MissingParameter(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("checkpoint does not match the model:\n{}", .0.join("\n"))]
    CheckpointMismatch(Vec<String>),

    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),

    #[error("manifest config hash {found} does not match config hash {expected}")]
    ConfigHashMismatch { expected: String, found: String },

    #[error("non-finite {what} at iteration {iteration}")]
    NonFinite { what: String, iteration: u64 },

    #[error("patch size {patch} exceeds image {height}x{width}")]
    PatchTooLarge {
        patch: usize,
        height: usize,
        width: usize,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl ToString) -> Self {
        Error::Format {
            path: path.into(),
            message: message.to_string(),
        }
    }
}
