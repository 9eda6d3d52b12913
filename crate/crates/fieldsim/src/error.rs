use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("point outside padded scene bounds: ({0}, {1}, {2})")]
    OutOfBounds(f64, f64, f64),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("pixel ({0}, {1}) outside image bounds {2}x{3}")]
    InvalidPixel(f64, f64, u32, u32),
    #[error("iso level {0} outside grid value range [{1}, {2}]")]
    EmptyMesh(f64, f64, f64),
    #[error("too few frames: {0}")]
    TooFewFrames(String),
    #[error("non-finite gradient in {0}")]
    NonFiniteGradient(String),
    #[error("non-finite network output in {0}")]
    NonFiniteOutput(String),
    #[error("non-finite loss: {0}")]
    NonFiniteLoss(String),
    #[error("episode already finished")]
    EpisodeFinished,
    #[error("renderer failure: {0}")]
    RendererFailure(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
