use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("{video_id}: malformed interval ({start}, {end}): {reason}")]
    MalformedInterval {
        video_id: String,
        start: f64,
        end: f64,
        reason: String,
    },
    #[error("unreadable media {path}: {reason}")]
    Unreadable { path: PathBuf, reason: String },
    #[error("manifest: {0}")]
    Manifest(String),
    #[error("stratification infeasible: {0}")]
    InfeasibleSplit(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Core(#[from] colors_core::Error),
}

pub type Result<T> = std::result::Result<T, DataError>;
