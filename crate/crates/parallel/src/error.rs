use thiserror::Error;
use tomoforge_core::TomoError;

use crate::pipeline::PipelineError;
use crate::transport::TransportError;

#[derive(Debug, Error)]
pub enum ParallelError {
    #[error(transparent)]
    Core(#[from] TomoError),
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error("cannot split {slices} slices across {workers} workers")]
    Partition { slices: usize, workers: usize },
    #[error("worker {0} panicked: {1}")]
    WorkerPanic(usize, String),
}

pub type Result<T> = std::result::Result<T, ParallelError>;
