use thiserror::Error;

/// Errors for kernel, spectral and selection operations.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid argument, dimension mismatch or domain violation.
    #[error("invalid input: {0}")]
    Input(String),

    /// A numeric routine failed (eigensolver, linear solve).
    #[error("numeric failure: {0}")]
    Numeric(String),

    /// Malformed CSV input; carries the 1-based offending line.
    #[error("csv error at line {line}: {message}")]
    Csv { line: usize, message: String },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }

    /// Process exit code used by the CLI: input and CSV problems map to 2,
    /// numeric failures to 3, everything else to 1.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Input(_) | Error::Csv { .. } => 2,
            Error::Numeric(_) => 3,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
