use std::path::PathBuf;

use thiserror::Error;

/// Errors surfaced by the runner. Each maps to a stable code printed as
/// `error[CODE]: message`.
#[derive(Debug, Error)]
pub enum SimError {
    #[error("{0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Data(pfedmoe_core::Error),
    #[error("{0}")]
    Format(String),
    #[error("{0}")]
    Checkpoint(String),
    #[error("{0}")]
    Run(pfedmoe_core::Error),
}

impl SimError {
    pub fn code(&self) -> &'static str {
        match self {
            SimError::Config(_) => "E_CONFIG",
            SimError::Io { .. } => "E_IO",
            SimError::Data(_) => "E_DATA",
            SimError::Format(_) => "E_FORMAT",
            SimError::Checkpoint(_) => "E_CHECKPOINT",
            SimError::Run(_) => "E_RUN",
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        SimError::Io {
            path: path.into(),
            source,
        }
    }

    /// The single-line form printed by the CLI.
    pub fn line(&self) -> String {
        let text = self.to_string().replace('\n', " ");
        format!("error[{}]: {text}", self.code())
    }
}

pub type Result<T, E = SimError> = std::result::Result<T, E>;
