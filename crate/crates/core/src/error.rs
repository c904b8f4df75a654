use std::io;
use std::time::Duration;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Invalid solver configuration. Every variant names the offending key.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("`{key}`: {reason}")]
    Invalid { key: String, reason: String },
    #[error("line {line}: cannot parse `{text}` (expected `key = value`)")]
    Syntax { line: usize, text: String },
    #[error("unknown configuration key `{0}`")]
    UnknownKey(String),
}

impl ConfigError {
    pub(crate) fn invalid(key: &str, reason: impl Into<String>) -> Self {
        ConfigError::Invalid {
            key: key.to_string(),
            reason: reason.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TransportError {
    #[error("rank {rank}: collective `{op}` timed out after {timeout:?} waiting for rank {peer}")]
    Timeout {
        rank: usize,
        peer: usize,
        op: &'static str,
        timeout: Duration,
    },
    #[error("rank {rank}: protocol error in `{op}`: {detail}")]
    Protocol {
        rank: usize,
        op: &'static str,
        detail: String,
    },
    #[error("rank {rank}: group aborted by a failing peer")]
    Aborted { rank: usize },
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(#[from] ConfigError),
    #[error("transport error: {0}")]
    Transport(#[from] TransportError),
    #[error("layout error: {0}")]
    Layout(String),
    #[error("solution diverged (non-finite values) at step {step}")]
    Divergence { step: u64 },
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn layout(msg: impl Into<String>) -> Self {
        Error::Layout(msg.into())
    }
}
