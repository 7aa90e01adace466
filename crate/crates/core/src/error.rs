use thiserror::Error;

/// Errors produced by the pose pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("point {index} lies behind the camera (depth {depth})")]
    BehindCamera { index: usize, depth: f64 },

    #[error("need at least {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },

    #[error("invalid pose: {0}")]
    InvalidPose(String),

    #[error("invalid camera intrinsics: {0}")]
    InvalidIntrinsics(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("landmark index mismatch at position {position}")]
    IndexMismatch { position: usize },

    #[error("non-finite reprojection cost")]
    NonFiniteCost,

    #[error("could not sample an in-frame pose after {0} attempts")]
    PoseSampling(usize),

    #[error("empty dataset")]
    EmptyDataset,

    #[error("unknown object id {0:?}")]
    UnknownObject(String),

    #[error("unknown image ids: {0:?}")]
    UnknownImages(Vec<String>),

    #[error("malformed {kind} data: {msg}")]
    Format { kind: &'static str, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("image codec error: {0}")]
    Image(#[from] image::ImageError),
}

impl Error {
    pub(crate) fn format(kind: &'static str, msg: impl Into<String>) -> Self {
        Error::Format { kind, msg: msg.into() }
    }

    /// True for errors caused by the numerics rather than by the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::NonFiniteCost | Error::PoseSampling(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
