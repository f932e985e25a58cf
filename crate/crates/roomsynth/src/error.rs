//! Shared error type and process exit-code mapping.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller violated an operation's contract (bad shapes, empty inputs,
    /// out-of-range arguments).
    #[error("contract violation: {0}")]
    Contract(String),

    /// A forward/backward pass or loss produced NaN/Inf.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Invalid configuration document.
    #[error("config error: {0}")]
    Config(String),

    /// Corpus/checkpoint/schema problems in input data.
    #[error("data error: {0}")]
    Data(String),

    /// A metric has no defined value on the given inputs.
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    /// Scene authoring gave up after too many placement rejections.
    #[error("generation error: {0}")]
    Generation(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// CLI exit code: 0 success, 2 config, 3 data, 4 numeric, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Data(_) | Error::Io(_) => 3,
            Error::Numeric(_) => 4,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
