use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    CheckFailed(String),
    #[error("{0}")]
    Numeric(String),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub fn io(path: &Path, err: impl std::fmt::Display) -> Self {
        CliError::Io(format!("{}: {err}", path.display()))
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) | CliError::Io(_) => 1,
            CliError::CheckFailed(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }
}

impl From<tmlab_core::Error> for CliError {
    fn from(e: tmlab_core::Error) -> Self {
        use tmlab_core::Error as E;
        match e {
            E::NonFinite { .. } | E::Diverged { .. } | E::Singular { .. } => CliError::Numeric(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}
