use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid window: {0}")]
    InvalidWindow(String),

    #[error("non-finite input at sample {index}")]
    NonFiniteInput { index: usize },

    #[error("channel mismatch: {0}")]
    ChannelMismatch(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("pooling error: {0}")]
    Pool(String),

    #[error("layer state error: {0}")]
    State(String),

    #[error("batch normalization needs at least 2 samples in training mode, got {0}")]
    BatchTooSmall(usize),

    #[error("classifier is not fitted")]
    NotFitted,

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("empty output: {0}")]
    EmptyOutput(String),

    #[error("cannot stratify: class {class} has only {count} window(s)")]
    Stratify { class: usize, count: usize },

    #[error("{}:{line}: {msg}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("non-finite loss at epoch {epoch}, batch {batch} (loss = {loss})")]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        loss: f64,
    },

    #[error("model file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            msg: msg.into(),
        }
    }
}
