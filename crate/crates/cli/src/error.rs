use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("{path}: invalid checkpoint: {msg}")]
    Format { path: PathBuf, msg: String },

    #[error("gradient check failed for {0}")]
    GradCheck(String),

    #[error(transparent)]
    Core(#[from] tinypeft_core::Error),
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;

impl CliError {
    /// 1 usage/config, 2 data/file, 3 numeric.
    pub fn exit_code(&self) -> i32 {
        use tinypeft_core::Error as E;
        match self {
            CliError::Usage(_) | CliError::Config(_) => 1,
            CliError::Format { .. } => 2,
            CliError::GradCheck(_) => 3,
            CliError::Core(e) => match e {
                E::Config(_) | E::State(_) | E::Contract(_) | E::Dimension { .. } | E::Index { .. } => 1,
                E::Data { .. } | E::Dataset(_) | E::Input(_) | E::Io { .. } => 2,
                E::NonFinite { .. } | E::NonFiniteLoss { .. } => 3,
            },
        }
    }
}
