use thiserror::Error;

/// Errors raised by the simulation and analysis routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// An argument violates the documented precondition of an operation.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    /// A channel with zero effective gain cannot be power controlled.
    #[error("degenerate channel: {0}")]
    DegenerateChannel(String),
    /// A requested computation exceeds a hard tractability cap.
    #[error("capacity exceeded: {0}")]
    CapacityExceeded(String),
    /// A configuration file failed to parse.
    #[error("config: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidArgument(msg.into()))
}
