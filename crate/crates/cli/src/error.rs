use std::process::ExitCode;

use dnerv_core::compress::CompressError;
use dnerv_core::io::IoError;
use dnerv_core::metrics::MetricsError;
use dnerv_core::model::ModelError;
use dnerv_core::train::TrainError;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad config, arguments or input files.
    #[error("{0}")]
    Invalid(String),
    /// Training produced a non-finite value.
    #[error("{0}")]
    Diverged(String),
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        match self {
            CliError::Invalid(_) => ExitCode::from(2),
            CliError::Diverged(_) => ExitCode::from(3),
            CliError::Failed(_) => ExitCode::from(1),
        }
    }
}

impl From<IoError> for CliError {
    fn from(e: IoError) -> Self {
        match e {
            IoError::Io { .. } => CliError::Failed(e.to_string()),
            _ => CliError::Invalid(e.to_string()),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Io(_) => CliError::Failed(e.to_string()),
            _ => CliError::Invalid(e.to_string()),
        }
    }
}

impl From<CompressError> for CliError {
    fn from(e: CompressError) -> Self {
        CliError::Invalid(e.to_string())
    }
}

impl From<MetricsError> for CliError {
    fn from(e: MetricsError) -> Self {
        CliError::Invalid(e.to_string())
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::NonFinite { .. } | TrainError::Diverged { .. } => CliError::Diverged(e.to_string()),
            TrainError::Config(_) | TrainError::Model(_) => CliError::Invalid(e.to_string()),
            TrainError::Tensor(_) => CliError::Failed(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Failed(e.to_string())
    }
}
