use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("invariant violated: {0}")]
    Invariant(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Invariant(_) => 3,
            CliError::Io { .. } => 1,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }
}

impl From<fima_core::Error> for CliError {
    fn from(e: fima_core::Error) -> Self {
        use fima_core::Error as E;
        match e {
            E::InvalidSpec(_) | E::InvalidConfig(_) | E::InfeasibleShards(_) | E::InvalidArgument(_) => {
                CliError::Config(e.to_string())
            }
            E::Io(source) => CliError::Io {
                path: PathBuf::new(),
                source,
            },
            other => CliError::Invariant(other.to_string()),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
