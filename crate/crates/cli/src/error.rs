use std::path::Path;

use vivid_core::guidance::{DenoiserError, GuidanceError};
use vivid_vision::VisionError;

/// Command failure; each variant maps to a process exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("config error at {}: {message}", if pointer.is_empty() { "<root>" } else { pointer.as_str() })]
    Schema { pointer: String, message: String },
    #[error("i/o error: {0}")]
    Io(String),
    #[error("remote denoiser error: {0}")]
    Remote(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
}

impl CliError {
    pub fn schema(pointer: impl Into<String>, message: impl Into<String>) -> Self {
        CliError::Schema { pointer: pointer.into(), message: message.into() }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Schema { .. } => 1,
            CliError::Io(_) | CliError::Remote(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }

    /// Prefixes schema messages with the file they came from.
    pub(crate) fn in_file(self, path: &Path) -> Self {
        match self {
            CliError::Schema { pointer, message } => {
                CliError::Schema { pointer, message: format!("{message} (in {})", path.display()) }
            }
            other => other,
        }
    }

    pub(crate) fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        CliError::Io(format!("{}: {e}", path.display()))
    }
}

impl From<GuidanceError> for CliError {
    fn from(e: GuidanceError) -> Self {
        match &e {
            GuidanceError::InvalidArgument(_) | GuidanceError::Shape(_) => CliError::Usage(e.to_string()),
            GuidanceError::NonFinite(_) => CliError::Numeric(e.to_string()),
            GuidanceError::Denoiser { source, .. } => match source {
                DenoiserError::Evaluation(_) => CliError::Numeric(e.to_string()),
                DenoiserError::Transport(_) | DenoiserError::Remote { .. } | DenoiserError::Protocol(_) => {
                    CliError::Remote(e.to_string())
                }
            },
        }
    }
}

impl From<VisionError> for CliError {
    fn from(e: VisionError) -> Self {
        match e {
            VisionError::InvalidArgument(_) | VisionError::Shape { .. } => CliError::Usage(e.to_string()),
            _ => CliError::Io(e.to_string()),
        }
    }
}
