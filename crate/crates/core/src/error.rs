use std::time::Duration;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("skin weight row {row} sums to {sum}")]
    WeightSum { row: usize, sum: f64 },

    #[error("degenerate pose: blended skinning transform is singular (det = {det:e})")]
    DegeneratePose { det: f64 },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("coarse stage produced no geometry")]
    EmptyGeometry,

    #[error("guidance request timed out after {0:?}")]
    Timeout(Duration),

    #[error("malformed guidance response: {0}")]
    Protocol(String),

    #[error("guidance transport failure: {0}")]
    Transport(String),

    #[error("guidance server returned {status}: {message}")]
    Server { status: u16, message: String },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("training aborted: {0}")]
    Aborted(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),
}

pub type Result<T> = std::result::Result<T, Error>;
