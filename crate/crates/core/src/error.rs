use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid subsystem selection: {0}")]
    Subsystem(String),

    #[error("not a valid density operator: {0}")]
    InvalidState(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("negative rate {rate} for channel {channel} at t = {time}")]
    NegativeRate { channel: usize, rate: f64, time: f64 },

    #[error("step too large: {0}")]
    StepTooLarge(String),

    #[error("time {time} outside the model domain [{start}, {end}]")]
    TimeOutOfRange { time: f64, start: f64, end: f64 },

    #[error("unsupported operation: {0}")]
    Unsupported(String),

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),
}

pub type Result<T> = std::result::Result<T, Error>;
