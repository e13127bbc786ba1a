use thiserror::Error;

pub type Result<T> = std::result::Result<T, JudgeError>;

#[derive(Debug, Error)]
pub enum JudgeError {
    #[error("judge reply violates the protocol: {0}")]
    Protocol(String),
    #[error("judge unavailable after {attempts} attempts: {last}")]
    Unavailable { attempts: u32, last: String },
    #[error("{failed} of {total} items failed annotation")]
    CorpusAnnotationFailed { failed: usize, total: usize },
    #[error("invalid judge configuration: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}
