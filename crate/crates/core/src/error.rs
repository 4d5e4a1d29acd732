use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed WAV data: {0}")]
    Format(String),

    #[error("unsupported WAV encoding: {0}")]
    UnsupportedCodec(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("input too short: {0}")]
    EmptyInput(String),

    #[error("transcriber backend error: {0}")]
    Backend(String),

    #[error("query budget of {0} exhausted")]
    BudgetExhausted(usize),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn param_err(msg: impl Into<String>) -> Error {
    Error::Parameter(msg.into())
}
