use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad or inconsistent configuration; names the offending field.
    #[error("configuration error in `{field}`: {message}")]
    Config { field: String, message: String },

    /// A required input is missing or a metric is undefined.
    #[error("{0}")]
    Precondition(String),

    #[error(transparent)]
    Core(cac_core::Error),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        CliError::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    /// 2 for configuration errors, 3 for unmet evaluation preconditions,
    /// 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config { .. } => 2,
            CliError::Precondition(_) => 3,
            CliError::Core(e) => match e {
                cac_core::Error::Config(_) | cac_core::Error::InvalidMesh(_) | cac_core::Error::InvalidTexture(_) => 2,
                cac_core::Error::UndefinedMetric(_) | cac_core::Error::NoProposals => 3,
                _ => 1,
            },
            CliError::Io { .. } => 1,
        }
    }
}

impl From<cac_core::Error> for CliError {
    fn from(e: cac_core::Error) -> Self {
        CliError::Core(e)
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
