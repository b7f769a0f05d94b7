use std::path::PathBuf;

use thiserror::Error;

/// Failures of the runner, each with its process exit code.
#[derive(Debug, Error)]
pub enum AppError {
    #[error("config error: {0}")]
    Config(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("cannot write {path}: {source}")]
    Write {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl AppError {
    pub fn exit_code(&self) -> i32 {
        match self {
            AppError::Config(_) | AppError::Read { .. } => 2,
            AppError::Precondition(_) => 3,
            AppError::Numerical(_) => 4,
            AppError::Write { .. } => 5,
        }
    }
}

impl From<neumann_core::Error> for AppError {
    fn from(e: neumann_core::Error) -> Self {
        use neumann_core::Error as E;
        match e {
            E::InvalidInput(m) => AppError::Config(m),
            E::Precondition(m) => AppError::Precondition(m),
            E::Stability { .. } => AppError::Precondition(e.to_string()),
            E::Numerical(m) => AppError::Numerical(m),
            E::CorruptedState(_) | E::DegenerateData(_) => AppError::Numerical(e.to_string()),
        }
    }
}

pub type AppResult<T> = Result<T, AppError>;
