use sketchforge::placement::PlacementError;
use thiserror::Error;

/// Failures of scene and generation requests. Each variant has a stable
/// machine-readable [`code`](ServiceError::code).
#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("unknown scene '{0}'")]
    UnknownScene(String),
    #[error("no weights for class '{class}': {reason}")]
    UnknownClass { class: String, reason: String },
    #[error("sketch has no strokes")]
    EmptySketch,
    #[error("the ray under the sketch does not hit the scene")]
    NoIntersection,
    #[error("{0}")]
    BadRequest(String),
    #[error("{0}")]
    Internal(String),
}

impl ServiceError {
    pub fn code(&self) -> &'static str {
        match self {
            ServiceError::UnknownScene(_) => "UnknownScene",
            ServiceError::UnknownClass { .. } => "UnknownClass",
            ServiceError::EmptySketch => "EmptySketch",
            ServiceError::NoIntersection => "NoIntersection",
            ServiceError::BadRequest(_) => "BadRequest",
            ServiceError::Internal(_) => "Internal",
        }
    }

    pub fn status(&self) -> u16 {
        match self {
            ServiceError::UnknownScene(_) | ServiceError::UnknownClass { .. } => 404,
            ServiceError::EmptySketch | ServiceError::NoIntersection => 422,
            ServiceError::BadRequest(_) => 400,
            ServiceError::Internal(_) => 500,
        }
    }
}

impl From<PlacementError> for ServiceError {
    fn from(e: PlacementError) -> Self {
        match e {
            PlacementError::EmptySketch => ServiceError::EmptySketch,
            PlacementError::NoIntersection => ServiceError::NoIntersection,
            PlacementError::InvalidInput(m) => ServiceError::BadRequest(m),
            other => ServiceError::Internal(other.to_string()),
        }
    }
}

impl From<std::io::Error> for ServiceError {
    fn from(e: std::io::Error) -> Self {
        ServiceError::Internal(e.to_string())
    }
}
