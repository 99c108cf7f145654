use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DimensionError {
    #[error("dimension mismatch: {left} vs {right}")]
    Mismatch { left: usize, right: usize },
    #[error("embedding dimension must be at least 2, got {0}")]
    TooSmall(usize),
    #[error("embedding contains non-finite values")]
    NonFinite,
    #[error("cannot normalize a zero vector")]
    ZeroVector,
    #[error("frame size mismatch: {0}x{1} vs {2}x{3}")]
    FrameSize(u32, u32, u32, u32),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("invalid value for `{field}`: {reason}")]
    OutOfRange { field: String, reason: String },
}

impl ConfigError {
    pub(crate) fn range(field: &str, reason: impl Into<String>) -> Self {
        ConfigError::OutOfRange { field: field.to_owned(), reason: reason.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PoseSolveError {
    #[error("degenerate 2D point configuration (collinear or coincident)")]
    Degenerate,
    #[error("pose solve diverged: reprojection RMSE {rmse:.3} px")]
    Diverged { rmse: f64 },
    #[error("point count mismatch: {points2d} image points, {points3d} model points")]
    PointCount { points2d: usize, points3d: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("no candidate frame reaches landmark coverage {coverage_min}")]
pub struct NoFrontalFrameError {
    pub coverage_min: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("retry attempt {attempt} exceeds max_retries {max_retries}")]
pub struct RetryExhaustedError {
    pub attempt: u32,
    pub max_retries: u32,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricError {
    #[error("{0}: input is empty")]
    Empty(&'static str),
    #[error("{metric}: need at least {needed} items, got {got}")]
    TooFew { metric: &'static str, needed: usize, got: usize },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error(transparent)]
    Dimension(#[from] DimensionError),
}
