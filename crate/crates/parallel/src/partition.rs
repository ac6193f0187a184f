use crate::error::{ParallelError, Result};

/// Halo reach along the rotation axis; the 26-neighbour stencil spans one slice.
pub const HALO_WIDTH: usize = 1;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SlabPartition {
    pub worker_id: usize,
    pub begin: usize,
    pub end: usize,
    pub lower: Option<usize>,
    pub upper: Option<usize>,
}

impl SlabPartition {
    pub fn len(&self) -> usize {
        self.end - self.begin
    }

    pub fn is_empty(&self) -> bool {
        self.begin == self.end
    }

    pub fn halo_width(&self) -> usize {
        HALO_WIDTH
    }
}

/// Contiguous, balanced split; the first `n_slices % n_workers` slabs get
/// one extra slice.
pub fn partition(n_slices: usize, n_workers: usize) -> Result<Vec<SlabPartition>> {
    if n_workers == 0 || n_slices < n_workers {
        return Err(ParallelError::Partition {
            slices: n_slices,
            workers: n_workers,
        });
    }
    let base = n_slices / n_workers;
    let extra = n_slices % n_workers;
    let mut begin = 0;
    Ok((0..n_workers)
        .map(|w| {
            let len = base + usize::from(w < extra);
            let p = SlabPartition {
                worker_id: w,
                begin,
                end: begin + len,
                lower: w.checked_sub(1),
                upper: (w + 1 < n_workers).then_some(w + 1),
            };
            begin += len;
            p
        })
        .collect())
}
