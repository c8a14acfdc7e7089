use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("input is empty")]
    EmptyInput,

    #[error("parse error at record {record} (line {line}): {message}")]
    Parse {
        record: usize,
        line: u64,
        message: String,
    },

    #[error("validation error: {0}")]
    Validation(String),

    /// Transport failure that persisted through every retry.
    #[error("transient provider failure after {attempts} attempts: {message}")]
    Transient { attempts: u32, message: String },

    #[error("provider returned status {status}: {message}")]
    Provider { status: u16, message: String },

    #[error("batch item {index} failed: {source}")]
    Batch {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    /// True for failures that originate at an embedding provider rather than in
    /// local input handling.
    pub fn is_provider_failure(&self) -> bool {
        match self {
            Error::Transient { .. } | Error::Provider { .. } => true,
            Error::Batch { source, .. } => source.is_provider_failure(),
            _ => false,
        }
    }
}
