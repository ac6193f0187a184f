//! One-shot halo exchange across all slabs of a volume.

use std::time::Duration;

use tomoforge_core::geometry::Volume;
use tomoforge_core::solver::{Halos, SlabComm};

use crate::comm::TransportComm;
use crate::error::{ParallelError, Result};
use crate::partition::SlabPartition;
use crate::transport::{channel_mesh, Endpoint, TransportStats};

/// Runs one exchange round with a thread per slab over in-process channels.
/// Returns each slab's halos and the message counters.
pub fn exchange_halos(partitions: &[SlabPartition], slabs: &[Volume], iteration: usize) -> Result<(Vec<Halos>, std::sync::Arc<TransportStats>)> {
    if partitions.len() != slabs.len() {
        return Err(tomoforge_core::TomoError::DimensionMismatch {
            what: "slabs",
            expected: partitions.len(),
            found: slabs.len(),
        }
        .into());
    }
    for (p, s) in partitions.iter().zip(slabs) {
        if s.slices() != p.len() {
            return Err(tomoforge_core::TomoError::DimensionMismatch {
                what: "slab slices",
                expected: p.len(),
                found: s.slices(),
            }
            .into());
        }
    }
    let endpoints = channel_mesh(partitions.len(), Duration::from_secs(30));
    let stats = std::sync::Arc::clone(endpoints[0].stats());
    let results: Vec<Result<Halos>> = std::thread::scope(|scope| {
        let handles: Vec<_> = endpoints
            .into_iter()
            .zip(partitions)
            .zip(slabs)
            .map(|((ep, p), slab)| {
                scope.spawn(move || {
                    let mut comm = TransportComm::new(ep, p.clone());
                    let last = slab.slices() - 1;
                    comm.exchange(iteration, slab.slice(0), slab.slice(last)).map_err(ParallelError::from)
                })
            })
            .collect();
        handles
            .into_iter()
            .enumerate()
            .map(|(w, h)| h.join().unwrap_or_else(|e| Err(ParallelError::WorkerPanic(w, panic_message(&e)))))
            .collect()
    });
    Ok((results.into_iter().collect::<Result<_>>()?, stats))
}

pub(crate) fn panic_message(e: &Box<dyn std::any::Any + Send>) -> String {
    e.downcast_ref::<&str>()
        .map(|s| s.to_string())
        .or_else(|| e.downcast_ref::<String>().cloned())
        .unwrap_or_else(|| "unknown panic".into())
}
