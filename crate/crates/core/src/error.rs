use thiserror::Error;

pub type Result<T> = std::result::Result<T, SftError>;

#[derive(Debug, Error)]
pub enum SftError {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("invalid data: {0}")]
    Data(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("memory bank not ready: {0}")]
    NotReady(String),

    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl SftError {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        SftError::Shape(msg.into())
    }
}
