use thiserror::Error;

/// Errors surfaced by the laboratory's library layer.
#[derive(Debug, Error)]
pub enum CoreError {
    #[error("shape mismatch in {context}: expected {expected}, got {actual}")]
    ShapeMismatch {
        context: String,
        expected: String,
        actual: String,
    },

    #[error("unknown feature column `{0}`")]
    UnknownColumn(String),

    #[error("duplicate parameter name `{0}`")]
    DuplicateParam(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("optimizer step rejected: non-finite gradient for parameter `{0}`")]
    NonFiniteGradient(String),

    #[error("backward pass rejected: {0}")]
    InvalidBackward(String),

    #[error("parameter store changed since the forward pass was recorded ({0})")]
    StaleTape(String),

    #[error("bucket `{0}` has no data; statistics are undefined")]
    SparseBucket(String),

    #[error("inconsistent oracle context: {0}")]
    InconsistentContext(String),

    #[error("training diverged: non-finite loss at epoch {epoch}, batch {batch}")]
    TrainDiverged { epoch: usize, batch: usize },

    #[error("checkpoint format error: {0}")]
    Checkpoint(String),

    #[error("malformed data row {row}: {reason}")]
    MalformedRow { row: usize, reason: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, CoreError>;
