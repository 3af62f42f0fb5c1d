use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("line {line}: {msg}")]
    Csv { line: u64, msg: String },

    #[error("measures live on different metric spaces")]
    SpaceMismatch,

    #[error("infeasible transport: total masses differ by {0:e}")]
    Infeasible(f64),

    #[error("transport solver failed: {0}")]
    Solver(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidInput(msg.into()))
}
