use thiserror::Error;

pub type Result<T, E = CoreError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error(transparent)]
    Tensor(#[from] handrift_tensor::TensorError),
    #[error("invalid input: {0}")]
    Input(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("sequence too short: need at least {need} frames, got {got}")]
    TooShort { need: usize, got: usize },
    #[error("inference diverged at diffusion step {step}")]
    Diverged { step: usize },
    #[error("non-finite values in layer `{0}`")]
    Numerical(String),
    #[error("alignment failed: {0}")]
    Alignment(String),
    #[error("training diverged at epoch {epoch}: {detail}")]
    TrainingDiverged { epoch: usize, detail: String },
    #[error("normalization mismatch: checkpoint has `{expected}`, input has `{found}`")]
    NormalizationMismatch { expected: String, found: String },
    #[error("unknown {kind} `{name}` (available: {available})")]
    UnknownStrategy {
        kind: &'static str,
        name: String,
        available: String,
    },
    #[error("motion file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl CoreError {
    pub(crate) fn input(msg: impl Into<String>) -> Self {
        CoreError::Input(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        CoreError::Config(msg.into())
    }
}
