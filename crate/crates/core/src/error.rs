use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("position ({x:.4}, {y:.4}) is outside the corridor")]
    OutOfTrack { x: f64, y: f64 },

    #[error("flow enclosure failed: {0}")]
    Enclosure(String),

    #[error("malformed weight file: {0}")]
    Weights(String),

    #[error("dimension mismatch: {context} expects {expected}, got {found}")]
    Dimension {
        context: String,
        expected: usize,
        found: usize,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
