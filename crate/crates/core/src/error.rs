use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("missing field `{0}` in tweet record")]
    MissingField(&'static str),
    #[error("field `{field}` out of range: {value}")]
    OutOfRange { field: &'static str, value: f64 },
    #[error("invalid tweet record: {0}")]
    BadRecord(String),
    #[error("non-consecutive window id: expected {expected}, got {got}")]
    WindowSequence { expected: u64, got: u64 },
    #[error("tweet `{tweet_id}` lies outside the configured region")]
    OutsideRegion { tweet_id: String },
    #[error("vector file error at line {line}: {message}")]
    VectorLoad { line: usize, message: String },
    #[error("vector dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("power-law fit failed: {0}")]
    Fit(String),
    #[error("autoencoder training diverged (non-finite loss at epoch {epoch})")]
    Divergence { epoch: usize },
    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: String, got: String },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("image `{image_id}` unusable: {reason}")]
    Image { image_id: String, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
