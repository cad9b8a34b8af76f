use thiserror::Error;

/// Errors raised by every module of the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("unknown symbol `{0}`")]
    UnknownSymbol(String),

    #[error("unknown id {id} (table holds {len})")]
    UnknownId { id: usize, len: usize },

    #[error("self-loop `{head} {relation} {tail}` is not allowed for this relation")]
    SelfLoop {
        head: String,
        relation: String,
        tail: String,
    },

    #[error("configuration: {0}")]
    Config(String),

    #[error("negative sampling exhausted after {attempts} attempts for triple ({head}, {relation}, {tail})")]
    SamplingExhausted {
        head: usize,
        relation: usize,
        tail: usize,
        attempts: usize,
    },

    #[error("training diverged at epoch {epoch} (learning rate {learning_rate}): non-finite loss")]
    Divergence { epoch: usize, learning_rate: f64 },

    #[error("metric undefined on empty input: {0}")]
    UndefinedMetric(&'static str),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Stable machine-readable class name, used by the CLI on failure.
    pub fn class(&self) -> &'static str {
        match self {
            Error::Parse { .. } => "parse",
            Error::UnknownSymbol(_) | Error::UnknownId { .. } => "unknown-symbol",
            Error::SelfLoop { .. } => "self-loop",
            Error::Config(_) => "config",
            Error::SamplingExhausted { .. } => "sampling-exhausted",
            Error::Divergence { .. } => "divergence",
            Error::UndefinedMetric(_) => "undefined-metric",
            Error::Checkpoint(_) => "checkpoint",
            Error::Io(_) => "io",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
