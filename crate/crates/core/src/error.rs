use std::io;

/// Errors produced anywhere in the magnifier pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// An input violated a shape, value or configuration invariant.
    #[error("validation error: {0}")]
    Validation(String),

    /// An index or coordinate fell outside its admissible range.
    #[error("range error: {0}")]
    Range(String),

    /// An operation that needs at least one element received none.
    #[error("empty domain: {0}")]
    EmptyDomain(String),

    /// Malformed file contents.
    #[error("format error: {0}")]
    Format(String),

    /// A well-formed file using a feature this crate does not read.
    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),

    /// Payload length disagrees with the declared header.
    #[error("payload size mismatch: expected {expected} bytes, found {actual}")]
    Truncated { expected: usize, actual: usize },

    #[error("i/o error: {0}")]
    Io(#[from] io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    /// An attention provider failed while serving a refinement pass.
    #[error("provider failed at iteration {iteration}: {source}")]
    Provider {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub(crate) fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }

    /// Process exit status used by the command-line front end.
    ///
    /// `2` format/I/O, `3` validation, `4` provider.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Format(_)
            | Error::UnsupportedFormat(_)
            | Error::Truncated { .. }
            | Error::Io(_)
            | Error::Json(_) => 2,
            Error::Validation(_) | Error::Range(_) | Error::EmptyDomain(_) => 3,
            Error::Provider { .. } => 4,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
