use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("{path}:{line}: duplicate record id `{id}`")]
    DuplicateId { path: PathBuf, line: usize, id: String },

    #[error("{path}:{line}: missing required field `{field}`")]
    MissingField {
        path: PathBuf,
        line: usize,
        field: &'static str,
    },

    #[error("need at least {need} distinct speakers, found {found}")]
    TooFewSpeakers { need: usize, found: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("signal too short: {len} samples, need at least {need}")]
    SignalTooShort { len: usize, need: usize },

    #[error("invalid sample rate {0}")]
    SampleRate(u32),

    #[error("tensor container {path}: {msg}")]
    Container { path: PathBuf, msg: String },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("training diverged at epoch {epoch}, step {step}: loss = {loss}")]
    Divergence { epoch: usize, step: usize, loss: f64 },

    #[error("token id {token} outside vocabulary of size {vocab}")]
    OutOfVocab { token: u32, vocab: usize },

    #[error("scorer failed on candidate {index}: {msg}")]
    Scorer { index: usize, msg: String },

    #[error("client error: {0}")]
    Client(String),

    #[error("external service: {0}")]
    External(String),

    #[error("run interrupted")]
    Interrupted,

    #[error("undefined input: {0}")]
    Undefined(String),

    #[error("sample ids not aligned: {0}")]
    Misaligned(String),

    #[error("factor `{0}` has a single class in the training rows")]
    DegenerateFactor(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Tensor(#[from] candle_core::Error),

    #[error(transparent)]
    Wav(#[from] hound::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
