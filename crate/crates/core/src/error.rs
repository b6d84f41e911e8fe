use thiserror::Error;

#[derive(Debug, Error)]
pub enum LabError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("front centering needs t > 1, got t = {0}")]
    HorizonTooSmall(f64),

    #[error("capacity exceeded: {what} (limit {limit}); progress: {progress}")]
    Capacity {
        what: &'static str,
        limit: usize,
        progress: String,
    },

    #[error("empty configuration: every leaf was pruned")]
    EmptyConfiguration,

    #[error("unknown leaf id {0}")]
    UnknownLeaf(usize),

    #[error("size mismatch: {0}")]
    SizeMismatch(String),

    #[error("time {0} is neither the horizon nor a recorded checkpoint")]
    TimeNotRecorded(f64),

    #[error("horizon constraint violated: {0}")]
    HorizonConstraint(String),

    #[error("empty tail: {0}")]
    EmptyTail(String),

    #[error("insufficient points: {0}")]
    InsufficientPoints(String),

    #[error("explicit scheme unstable: dt = {dt} exceeds dx^2 = {limit}")]
    Unstable { dt: f64, limit: f64 },

    #[error("profile does not cross level {0}")]
    NoCrossing(f64),

    #[error("profile not converged: {0}")]
    NotConverged(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, LabError>;
