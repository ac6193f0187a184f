//! Three-thread pipeline: ingest, compute and egress connected by bounded
//! queues, so staging of one task overlaps computation of the next.

use std::fmt::Display;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::mpsc::{sync_channel, Receiver, SyncSender};
use std::sync::Mutex;

use thiserror::Error;

use crate::halo::panic_message;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Ingest,
    Compute,
    Egress,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PipelineError {
    #[error("queue capacity must be at least 1")]
    Capacity,
    #[error("task {task_id} failed in {stage:?}: {message}")]
    Stage { task_id: usize, stage: Stage, message: String },
    #[error("{stage:?} stage stopped before the end of the stream")]
    Aborted { stage: Stage },
}

/// A unit of work on its way to `stage`.
#[derive(Debug)]
pub struct PipelineTask<P> {
    pub task_id: usize,
    pub stage: Stage,
    pub payload: P,
}

/// `None` is the end-of-stream sentinel.
type Link<P> = Option<PipelineTask<P>>;

struct Poison(Mutex<Option<PipelineError>>);

impl Poison {
    fn set(&self, e: PipelineError) {
        let mut g = self.0.lock().unwrap_or_else(|p| p.into_inner());
        g.get_or_insert(e);
    }
}

fn call<I, O, E: Display>(f: &(impl Fn(usize, I) -> Result<O, E> + Sync), id: usize, stage: Stage, input: I) -> Result<O, PipelineError> {
    match catch_unwind(AssertUnwindSafe(|| f(id, input))) {
        Ok(Ok(v)) => Ok(v),
        Ok(Err(e)) => Err(PipelineError::Stage {
            task_id: id,
            stage,
            message: e.to_string(),
        }),
        Err(p) => Err(PipelineError::Stage {
            task_id: id,
            stage,
            message: format!("panic: {}", panic_message(&p)),
        }),
    }
}

/// Passes every task through `ingest`, `compute` and `egress` in order on
/// three threads. Results come back as `(task_id, result)` in task order.
/// The first failure stops all stages and is returned with its task id.
pub fn run_pipeline<T, A, B, R, E>(
    tasks: Vec<T>,
    ingest: impl Fn(usize, T) -> Result<A, E> + Sync,
    compute: impl Fn(usize, A) -> Result<B, E> + Sync,
    egress: impl Fn(usize, B) -> Result<R, E> + Sync,
    capacity: usize,
) -> Result<Vec<(usize, R)>, PipelineError>
where
    T: Send,
    A: Send,
    B: Send,
    R: Send,
    E: Display,
{
    if capacity == 0 {
        return Err(PipelineError::Capacity);
    }
    let poison = Poison(Mutex::new(None));
    let (to_compute, compute_rx): (SyncSender<Link<A>>, Receiver<Link<A>>) = sync_channel(capacity);
    let (to_egress, egress_rx): (SyncSender<Link<B>>, Receiver<Link<B>>) = sync_channel(capacity);
    let results = std::thread::scope(|scope| {
        let poison = &poison;
        let (ingest, compute, egress) = (&ingest, &compute, &egress);
        scope.spawn(move || {
            for (id, t) in tasks.into_iter().enumerate() {
                match call(ingest, id, Stage::Ingest, t) {
                    Ok(a) => {
                        let task = PipelineTask { task_id: id, stage: Stage::Compute, payload: a };
                        if to_compute.send(Some(task)).is_err() {
                            return;
                        }
                    }
                    Err(e) => return poison.set(e),
                }
            }
            let _ = to_compute.send(None);
        });
        scope.spawn(move || loop {
            match compute_rx.recv() {
                Ok(Some(task)) => match call(compute, task.task_id, Stage::Compute, task.payload) {
                    Ok(b) => {
                        let task = PipelineTask { task_id: task.task_id, stage: Stage::Egress, payload: b };
                        if to_egress.send(Some(task)).is_err() {
                            return;
                        }
                    }
                    Err(e) => return poison.set(e),
                },
                Ok(None) => {
                    let _ = to_egress.send(None);
                    return;
                }
                Err(_) => return poison.set(PipelineError::Aborted { stage: Stage::Compute }),
            }
        });
        let sink = scope.spawn(move || {
            let mut out = Vec::new();
            loop {
                match egress_rx.recv() {
                    Ok(Some(task)) => match call(egress, task.task_id, Stage::Egress, task.payload) {
                        Ok(r) => out.push((task.task_id, r)),
                        Err(e) => {
                            poison.set(e);
                            return out;
                        }
                    },
                    Ok(None) => return out,
                    Err(_) => {
                        poison.set(PipelineError::Aborted { stage: Stage::Egress });
                        return out;
                    }
                }
            }
        });
        sink.join().unwrap_or_default()
    });
    // a stage error outranks the aborts it caused downstream
    match poison.0.into_inner().unwrap_or_else(|p| p.into_inner()) {
        Some(e) => Err(e),
        None => Ok(results),
    }
}
