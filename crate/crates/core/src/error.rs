//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    // --- tokenizer / model ---
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("input of {len} positions exceeds max_seq {max_seq}")]
    SequenceTooLong { len: usize, max_seq: usize },
    #[error("shape mismatch: {0}")]
    ShapeError(String),
    #[error("sequence of length {0} cannot produce a next-token target")]
    DegenerateSequence(usize),
    #[error("training diverged at step {step}: loss = {loss}")]
    TrainingDiverged { step: usize, loss: f64 },

    // --- steering ---
    #[error("activation dataset is empty")]
    EmptyDataset,
    #[error("mean difference has norm {norm:.3e}; cannot normalize")]
    DegenerateDirection { norm: f64 },
    #[error("intervention hook set is empty")]
    InvalidHookSet,
    #[error("no candidate direction survived screening")]
    NoViableDirection,

    // --- corpus ---
    #[error("invalid corpus spec: {0}")]
    SpecError(String),
    #[error("line {line}: malformed JSON: {msg}")]
    ParseError { line: usize, msg: String },
    #[error("line {line}: {msg}")]
    SchemaError { line: usize, msg: String },

    // --- eval ---
    #[error("input is empty")]
    EmptyInput,
    #[error("invalid sampling design: {0}")]
    InvalidDesign(String),
    #[error("gold label for unknown item {0:?}")]
    KeyError(String),
    #[error("baseline mean is zero; percent decrease undefined")]
    UndefinedEffect,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
    #[error("weight file: {0}")]
    WeightFile(String),
}
