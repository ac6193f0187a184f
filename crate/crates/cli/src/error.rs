use std::path::Path;

use thiserror::Error;
use tomoforge_core::TomoError;
use tomoforge_parallel::{ParallelError, PipelineError};

/// Errors of the batch tool, each tied to a process exit code.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Numerical(String),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::Io(_) => 4,
        }
    }

    pub fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        CliError::Io(format!("{}: {e}", path.display()))
    }
}

impl From<TomoError> for CliError {
    fn from(e: TomoError) -> Self {
        match e {
            TomoError::InvalidGeometry(_)
            | TomoError::InvalidParameter(_)
            | TomoError::DimensionMismatch { .. }
            | TomoError::SizeGuard { .. } => CliError::Usage(e.to_string()),
            TomoError::ZeroOperator | TomoError::NonFinite { .. } => CliError::Numerical(e.to_string()),
            // workers talk over loopback sockets or channels
            TomoError::Communication(_) => CliError::Io(e.to_string()),
        }
    }
}

impl From<ParallelError> for CliError {
    fn from(e: ParallelError) -> Self {
        match e {
            ParallelError::Core(e) => e.into(),
            ParallelError::Partition { .. } => CliError::Usage(e.to_string()),
            ParallelError::Transport(_) => CliError::Io(e.to_string()),
            ParallelError::Pipeline(e) => e.into(),
            ParallelError::WorkerPanic(..) => CliError::Numerical(e.to_string()),
        }
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        CliError::Numerical(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
