//! Slab-parallel execution of the MBIR solver.
//!
//! The volume is cut into slabs of consecutive slices along the rotation
//! axis. The data term never couples slices, so each worker evaluates it
//! alone; the prior reaches one slice across a cut, which is served by halo
//! planes exchanged once per iteration over a [`transport::Endpoint`].

pub mod comm;
pub mod distributed;
pub mod error;
pub mod halo;
pub mod partition;
pub mod pipeline;
pub mod transport;

pub use distributed::{distributed_solve, DistributedOptions, DistributedOutput, ParallelLevelSolver, TransportKind};
pub use error::ParallelError;
pub use partition::{partition, SlabPartition};
pub use pipeline::{run_pipeline, PipelineError, Stage};

/// Upper bound on worker threads from `TOMOFORGE_THREADS`, if set.
pub fn thread_cap() -> Option<usize> {
    std::env::var("TOMOFORGE_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
}
