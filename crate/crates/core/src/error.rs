use thiserror::Error;

/// Errors surfaced by the learning core and the runtime.
#[derive(Debug, Error)]
pub enum Error {
    /// Shapes, dimensions or settings that do not fit together.
    #[error("configuration error: {0}")]
    Config(String),
    /// A caller broke an operation's precondition (e.g. picked a masked action).
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("checkpoint format error: {0}")]
    Format(String),
    /// The replay buffer cannot serve a batch yet; the caller should retry later.
    #[error("replay holds {have} episodes, batch needs {need}")]
    InsufficientSamples { have: usize, need: usize },
    #[error("runtime failure: {0}")]
    Runtime(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn config_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Config(msg.into()))
}

pub(crate) fn contract_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Contract(msg.into()))
}
