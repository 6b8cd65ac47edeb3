use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("training error: {0}")]
    Training(String),
    #[error("ingestion error: {0}")]
    Ingestion(String),
    #[error("corruption: {0}")]
    Corruption(String),
    #[error("rejected input: {0}")]
    Rejected(String),
    #[error("invalid input: {0}")]
    Input(String),
    #[error("protocol error (code {code}): {detail}")]
    Protocol { code: u32, detail: String },
    #[error("node unavailable: {node}: {reason}")]
    NodeUnavailable { node: String, reason: String },
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn corruption(msg: impl Into<String>) -> Self {
        Error::Corruption(msg.into())
    }

    /// Process exit code used by the command-line tool.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io(_) => 3,
            Error::Protocol { .. } | Error::NodeUnavailable { .. } => 4,
            _ => 2,
        }
    }
}
