use std::path::Path;

/// Failures of the file formats and commands, grouped by exit code.
#[derive(Debug, thiserror::Error)]
pub enum AppError {
    #[error("usage: {0}")]
    Usage(String),

    #[error("{0}")]
    Data(String),

    #[error("{0}")]
    Numeric(String),
}

impl AppError {
    pub fn exit_code(&self) -> u8 {
        match self {
            AppError::Usage(_) => 1,
            AppError::Data(_) => 2,
            AppError::Numeric(_) => 3,
        }
    }

    pub fn data(msg: impl Into<String>) -> Self {
        AppError::Data(msg.into())
    }

    pub fn usage(msg: impl Into<String>) -> Self {
        AppError::Usage(msg.into())
    }

    pub fn io(path: &Path, err: std::io::Error) -> Self {
        AppError::Data(format!("{}: {err}", path.display()))
    }
}

impl From<cabp_core::Error> for AppError {
    fn from(e: cabp_core::Error) -> Self {
        match e {
            cabp_core::Error::NonFinite { .. } => AppError::Numeric(e.to_string()),
            other => AppError::Data(other.to_string()),
        }
    }
}

pub type AppResult<T> = Result<T, AppError>;
