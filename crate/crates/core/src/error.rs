use thiserror::Error;

/// Errors produced by the inference pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// A malformed input record. `line` is 1-based and counts the header.
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A sweep work unit failed; the unit is identified by its window and timescale pair.
    #[error("window {window}, timescales ({dt1} s, {dt2} s): {source}")]
    Task {
        window: usize,
        dt1: u32,
        dt2: u32,
        #[source]
        source: Box<Error>,
    },

    #[error("incomplete sweep, missing cells: {0}")]
    IncompleteSweep(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
