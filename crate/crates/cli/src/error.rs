use std::path::PathBuf;

/// Pipeline failure, mapped to the process exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("missing {}: run `factorspan {stage}` first", path.display())]
    Upstream { stage: String, path: PathBuf },
    #[error(transparent)]
    Runtime(#[from] anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Upstream { .. } => 3,
            CliError::Runtime(_) => 4,
        }
    }

    pub fn config(msg: impl Into<String>) -> CliError {
        CliError::Config(msg.into())
    }
}

impl From<factorspan_core::Error> for CliError {
    fn from(e: factorspan_core::Error) -> Self {
        CliError::Runtime(e.into())
    }
}

impl From<factorspan_model::ModelError> for CliError {
    fn from(e: factorspan_model::ModelError) -> Self {
        CliError::Runtime(e.into())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.into())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Runtime(e.into())
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
