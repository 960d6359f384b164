use thiserror::Error;

/// Errors surfaced by dataset handling, model construction, and training.
#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed row at line {line}: {reason}")]
    MalformedRow { line: u64, reason: String },

    #[error("unknown behavior label `{label}` at line {line}")]
    UnknownBehavior { label: String, line: u64 },

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("dataset is empty after filtering to multi-behavior users")]
    EmptyAfterFiltering,

    #[error("invalid config: {0}")]
    Config(String),

    #[error("synthetic config produced zero target-behavior interactions; increase funnel_probs")]
    EmptySynthTarget,

    #[error("index out of range: {0}")]
    IndexOutOfRange(String),

    #[error("non-finite gradient in parameter `{0}`")]
    NonFiniteGradient(String),

    #[error("negative sampling exhausted for user {user} at behavior level {level}: user interacts with (nearly) every item")]
    NegativeSamplingExhausted { user: u32, level: usize },

    #[error("training diverged at epoch {epoch}: loss is not finite")]
    Diverged { epoch: usize },

    #[error("user {0} has no held-out test item")]
    NoTestItem(u32),

    #[error("metric over empty rank list")]
    EmptyRanks,

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
