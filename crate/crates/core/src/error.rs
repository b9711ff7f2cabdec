use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = FwicError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum FwicError {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("dimension mismatch in {context}: expected {expected:?}, got {got:?}")]
    Dimension {
        context: &'static str,
        expected: Vec<usize>,
        got: Vec<usize>,
    },

    #[error("stability violation: {0}")]
    Stability(String),

    #[error("wavefield diverged (non-finite value) at time step {step}")]
    Divergence { step: usize },

    #[error("malformed {kind} file {path:?}: {reason}")]
    Format {
        kind: &'static str,
        path: PathBuf,
        reason: String,
    },

    #[error("missing artifact {path:?}; build it first with `{build_step}`")]
    MissingArtifact { path: PathBuf, build_step: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl FwicError {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        FwicError::Parameter(msg.into())
    }

    pub(crate) fn dims(context: &'static str, expected: &[usize], got: &[usize]) -> Self {
        FwicError::Dimension {
            context,
            expected: expected.to_vec(),
            got: got.to_vec(),
        }
    }
}
