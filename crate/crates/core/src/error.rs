use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    RawIo(#[from] std::io::Error),
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("token id {id} is outside the vocabulary (size {vocab_size})")]
    OutOfVocabulary { id: u32, vocab_size: usize },
    #[error("ARPA parse error at line {line}: {message}")]
    Arpa { line: usize, message: String },
    #[error("malformed file {path}: {message}")]
    Format { path: String, message: String },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("training diverged: {0}")]
    Diverged(String),
    #[error("config error in key `{key}`: {message}")]
    Config { key: String, message: String },
    #[error("missing artifact {artifact}; run stage `{stage}` first")]
    MissingArtifact { artifact: String, stage: String },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(message: impl Into<String>) -> Self {
        Error::InvalidArgument(message.into())
    }
}
