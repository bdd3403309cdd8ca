use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the valuation engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{}:{line}: {msg}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("lookup error: {0}")]
    Lookup(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("size error: {0}")]
    Size(String),

    #[error("precedence violation: parent of player {player} is not included")]
    Precedence { player: usize },

    #[error("state error: {0}")]
    State(String),

    /// No training pairs were available; callers substitute U(empty) = 0.
    #[error("empty coalition: no labeled roots to train on")]
    EmptyCoalition,

    #[error("integrity error: {0}")]
    Integrity(String),

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
