use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Operand shapes do not agree.
    #[error("dimension error: {0}")]
    Dimension(String),

    /// An operation was called outside its contract (e.g. backward from a non-scalar).
    #[error("contract error: {0}")]
    Contract(String),

    /// A variable was used with a tape that did not record it.
    #[error("tape error: {0}")]
    Tape(String),

    /// A non-finite value appeared. `stage` names where it was detected.
    #[error("numeric error in {stage}: {detail}")]
    Numeric { stage: String, detail: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("input error: {0}")]
    Input(String),

    #[error("vocabulary error: {0}")]
    Vocabulary(String),

    #[error("state error: {0}")]
    State(String),

    #[error("format error at line {line}: {detail}")]
    Format { line: usize, detail: String },

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub(crate) fn numeric(stage: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Numeric {
            stage: stage.into(),
            detail: detail.into(),
        }
    }

    /// Re-tags a numeric error with the enclosing stage name; other errors pass through.
    pub fn in_stage(self, stage: &str) -> Self {
        match self {
            Error::Numeric { stage: inner, detail } => Error::Numeric {
                stage: format!("{stage}/{inner}"),
                detail,
            },
            other => other,
        }
    }
}
