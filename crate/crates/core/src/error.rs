use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {left:?} vs {right:?}")]
    ShapeMismatch { left: Vec<usize>, right: Vec<usize> },

    #[error("invalid shape {shape:?} for {len} elements")]
    InvalidShape { shape: Vec<usize>, len: usize },

    #[error("empty tensor")]
    EmptyTensor,

    #[error("non-finite value in {name} at index {index}")]
    NonFinite { name: String, index: usize },

    #[error("bias correction requires t >= 1 (got t = 0)")]
    ZeroStep,

    #[error("invalid config: {0}")]
    Config(String),

    #[error("training diverged at step {step}: loss = {loss}")]
    Diverged { step: u64, loss: f64 },

    #[error("objective became non-finite at step {step}")]
    NonFiniteObjective { step: usize },

    #[error("fold {fold} has no samples")]
    EmptyFold { fold: usize },

    #[error("prediction set is empty")]
    EmptyPredictions,

    #[error("member {member} is incompatible with the ensemble: {reason}")]
    IncompatibleMember { member: String, reason: String },

    #[error("parse error in {path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Short stable identifier used in machine-readable CLI error lines.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::ShapeMismatch { .. } => "shape_mismatch",
            Error::InvalidShape { .. } => "invalid_shape",
            Error::EmptyTensor => "empty_tensor",
            Error::NonFinite { .. } => "non_finite",
            Error::ZeroStep => "zero_step",
            Error::Config(_) => "config",
            Error::Diverged { .. } => "diverged",
            Error::NonFiniteObjective { .. } => "non_finite_objective",
            Error::EmptyFold { .. } => "empty_fold",
            Error::EmptyPredictions => "empty_predictions",
            Error::IncompatibleMember { .. } => "incompatible_member",
            Error::Parse { .. } => "parse",
            Error::Io { .. } => "io",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            message: message.into(),
        }
    }
}
