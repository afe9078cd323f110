use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in document {doc_id}: {message}")]
    Parse { doc_id: String, message: String },

    #[error("alignment error in document {doc_id}: {message}")]
    Alignment { doc_id: String, message: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("class {class} has {available} examples, {requested} requested")]
    ClassShortage {
        class: String,
        available: usize,
        requested: usize,
    },

    #[error("token id {id} out of range for vocabulary of size {vocab_size}")]
    TokenOutOfRange { id: usize, vocab_size: usize },

    #[error("input of length {len} exceeds maximum sequence length {max_len}")]
    InputTooLong { len: usize, max_len: usize },

    #[error("length mismatch: {0}")]
    LengthMismatch(String),

    #[error("missing gold annotation on document {0}")]
    MissingGold(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("non-finite loss {value} at {context}")]
    NonFinite { value: f64, context: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("run directory error: {0}")]
    RunDir(String),
}

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// True for failures caused by the caller's input or configuration rather
    /// than by the training numerics.
    pub fn is_user_error(&self) -> bool {
        !matches!(self, Error::NonFinite { .. })
    }
}
