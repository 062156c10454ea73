use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("point is behind the camera (depth {depth:.3e} mm)")]
    BehindCamera { depth: f64 },
    #[error("point or pixel lies outside the fisheye field of view")]
    OutsideFieldOfView,
    #[error("degenerate bone {edge} (length {length:.3e} mm)")]
    DegenerateBone { edge: usize, length: f64 },
    #[error("degenerate point configuration: {0}")]
    DegenerateConfiguration(&'static str),
    #[error("insufficient points: need {needed}, got {got}")]
    InsufficientPoints { needed: usize, got: usize },
    #[error("insufficient training data: need {needed} windows, got {got}")]
    InsufficientData { needed: usize, got: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("sequence of {len} frames is shorter than the window size {window}")]
    SequenceTooShort { len: usize, window: usize },
    #[error("camera initialization failed for every frame of the window")]
    InitializationFailure,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("schema error: {0}")]
    Schema(String),
    #[error("estimator failed at bootstrap iteration {iteration}: {message}")]
    Estimator { iteration: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
