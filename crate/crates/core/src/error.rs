use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("non-finite state in {what}")]
    NonFinite { what: String },

    #[error("particle {particle} became non-finite at step {step} (t = {time}); parameters: {echo}")]
    Trajectory {
        particle: usize,
        step: u64,
        time: f64,
        echo: String,
    },

    #[error("estimation window holds {found} checkpoints, at least {needed} are required")]
    WindowTooSmall { found: usize, needed: usize },

    #[error("too few samples: {0}")]
    TooFewSamples(String),

    #[error("checkpoint grids differ")]
    GridMismatch,

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    /// True for failures caused by the input rather than by the numerics.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            Error::Config(_) | Error::InvalidParameter { .. } | Error::DimensionMismatch { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
