use alloc::string::String;

/// Errors raised anywhere in the codec core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("corrupt stream: {0}")]
    CorruptStream(String),
    #[error("missing prompt: {0}")]
    MissingPrompt(String),
    #[error("numerical error: {0}")]
    Numerical(String),
}

pub type Result<T> = core::result::Result<T, Error>;

macro_rules! invalid_input {
    ($($arg:tt)*) => { $crate::Error::InvalidInput(alloc::format!($($arg)*)) };
}
macro_rules! invalid_config {
    ($($arg:tt)*) => { $crate::Error::InvalidConfig(alloc::format!($($arg)*)) };
}
macro_rules! corrupt {
    ($($arg:tt)*) => { $crate::Error::CorruptStream(alloc::format!($($arg)*)) };
}
pub(crate) use {corrupt, invalid_config, invalid_input};
