use thiserror::Error;

/// Errors raised across the simulator.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration, rejected before a run starts.
    #[error("configuration error: {0}")]
    Config(String),

    /// A caller broke an operation's precondition.
    #[error("contract violation: {0}")]
    Contract(String),

    /// Non-finite particle state after a swarm update.
    #[error("numerical fault: agent {agent} produced a non-finite {what} at iteration {iteration}")]
    NumericalFault {
        agent: usize,
        iteration: usize,
        what: &'static str,
    },

    /// Transport or decoding failure while talking to a guidance endpoint.
    #[error("guidance endpoint error: {0}")]
    Endpoint(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn config(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

pub(crate) fn contract(msg: impl Into<String>) -> Error {
    Error::Contract(msg.into())
}
