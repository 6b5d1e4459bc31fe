use std::io;
use std::path::Path;

use veritensor_core::error::ModelError;

/// Every failure the front end reports, each with a fixed exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("rejected at {0}")]
    Reject(String),
    #[error("{0}")]
    Usage(String),
    #[error("malformed manifest: {0}")]
    Manifest(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("{path}: {source}")]
    Io { path: String, source: io::Error },
    #[error(transparent)]
    Model(#[from] ModelError),
}

impl CliError {
    pub fn io(path: &Path, source: io::Error) -> Self {
        Self::Io {
            path: path.display().to_string(),
            source,
        }
    }

    /// 0 accept, 1 reject, 2 usage or malformed input, 3 shape or
    /// truncation, 4 IO.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Reject(_) => 1,
            Self::Usage(_) | Self::Manifest(_) => 2,
            Self::Shape(_) => 3,
            Self::Io { .. } => 4,
            Self::Model(e) => match e {
                ModelError::BadConfig(_) | ModelError::EmptyInput | ModelError::PositionOutOfRange(_) => 2,
                ModelError::MissingWeight(_) | ModelError::WeightShape { .. } | ModelError::CommitmentMismatch { .. } => 3,
                ModelError::Store(_) => 4,
                _ => 1,
            },
        }
    }
}
