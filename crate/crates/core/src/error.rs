use thiserror::Error;

pub type Result<T> = std::result::Result<T, CteError>;

#[derive(Debug, Error)]
pub enum CteError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("parse error at row {row}: {msg}")]
    Parse { row: usize, msg: String },

    #[error("index {index} out of bounds for {len} rows")]
    Bounds { index: usize, len: usize },

    #[error("format error: {0}")]
    Format(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl CteError {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        CteError::Config(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        CteError::Shape(msg.into())
    }
}
