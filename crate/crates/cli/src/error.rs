use std::process::ExitCode;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("incompatible input: {0}")]
    Compat(String),
    #[error("{0}")]
    Lookup(String),
    #[error("{0}")]
    Failed(String),
    #[error(transparent)]
    Core(kge_core::Error),
}

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(match self {
            CliError::Usage(_) => 2,
            CliError::Compat(_) => 3,
            CliError::Lookup(_) => 4,
            CliError::Failed(_) | CliError::Core(_) => 1,
        })
    }
}

impl From<kge_core::Error> for CliError {
    fn from(e: kge_core::Error) -> Self {
        use kge_core::Error as E;
        match e {
            E::Config(m) => CliError::Usage(m),
            E::Version { .. } | E::Format(_) | E::Dimension { .. } | E::UnsupportedKind(_) => {
                CliError::Compat(e.to_string())
            }
            E::UnknownName { .. } => CliError::Lookup(e.to_string()),
            other => CliError::Core(other),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
