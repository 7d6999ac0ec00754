use std::io;

#[derive(Debug, thiserror::Error)]
pub enum MonitorError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid input data: {0}")]
    Data(String),
    #[error("numerical failure: {0}")]
    Numerical(#[from] iupm_core::Error),
    #[error("rejected: {message}")]
    Rejected { code: &'static str, message: String },
    #[error("i/o: {0}")]
    Io(#[from] io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, MonitorError>;

impl MonitorError {
    pub fn rejected(code: &'static str, message: impl Into<String>) -> Self {
        MonitorError::Rejected {
            code,
            message: message.into(),
        }
    }

    /// Process exit status for the CLI.
    pub fn exit_code(&self) -> i32 {
        match self {
            MonitorError::Config(_) | MonitorError::Data(_) => 2,
            MonitorError::Numerical(_) => 3,
            _ => 1,
        }
    }
}
