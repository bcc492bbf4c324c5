use thiserror::Error;

#[derive(Debug, Error)]
pub enum VpsError {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("linear solve failed: {0}")]
    Solve(String),

    #[error("config line {line}: {msg}")]
    Config { line: usize, msg: String },

    #[error("{0}")]
    Refused(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, VpsError>;

pub(crate) fn shape_err(op: &'static str, detail: impl Into<String>) -> VpsError {
    VpsError::Shape {
        op,
        detail: detail.into(),
    }
}
