//! Slab-parallel FISTA: one thread per slab, each running the core solver on
//! its slices and talking to the others only through a transport.

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use tomoforge_core::geometry::{Sinogram, Volume};
use tomoforge_core::multires::LevelSolver;
use tomoforge_core::qggmrf::{NeighborStencil, QggmrfParams};
use tomoforge_core::radon::RadonOperator;
use tomoforge_core::solver::{estimate_lipschitz, solve_slab, IterationRecord, SlabHooks, SlabProblem, SolveOutput, SolverConfig};
use tomoforge_core::toeplitz::{FidelityContext, PsfKernel};
use tomoforge_core::TomoError;

use crate::comm::TransportComm;
use crate::error::{ParallelError, Result};
use crate::halo::panic_message;
use crate::partition::{partition, SlabPartition};
use crate::transport::{channel_mesh, tcp_mesh, Endpoint, TransportStats, DEFAULT_TIMEOUT};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum TransportKind {
    #[default]
    Channel,
    Tcp,
}

impl std::str::FromStr for TransportKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "channel" => Ok(Self::Channel),
            "tcp" => Ok(Self::Tcp),
            _ => Err(format!("unknown transport '{s}' (channel|tcp)")),
        }
    }
}

#[derive(Clone, Debug)]
pub struct DistributedOptions {
    pub workers: usize,
    pub transport: TransportKind,
    pub timeout: Duration,
    /// Keep the assembled volume of every iteration.
    pub capture_states: bool,
}

impl Default for DistributedOptions {
    fn default() -> Self {
        Self {
            workers: 1,
            transport: TransportKind::Channel,
            timeout: DEFAULT_TIMEOUT,
            capture_states: false,
        }
    }
}

#[derive(Debug)]
pub struct DistributedOutput {
    pub volume: Volume,
    pub records: Vec<IterationRecord>,
    pub lipschitz: f64,
    pub workers: usize,
    pub stats: Arc<TransportStats>,
    /// Volume after each iteration (index 0 is `f0`), if captured.
    pub states: Vec<Volume>,
}

pub type SharedSink<'a> = &'a mut (dyn FnMut(&IterationRecord) + Send);

/// Worker count after applying `TOMOFORGE_THREADS` and the slice count.
pub fn effective_workers(requested: usize, slices: usize) -> usize {
    let mut w = requested.max(1);
    if let Some(cap) = crate::thread_cap() {
        if cap < w {
            log::warn!("TOMOFORGE_THREADS={cap} caps {w} requested workers");
            w = cap;
        }
    }
    w.min(slices)
}

/// Reconstructs `ctx`'s volume with `opts.workers` slabs. Every iteration's
/// records and iterates match the single-slab solve exactly.
pub fn distributed_solve(
    ctx: &FidelityContext,
    params: &QggmrfParams,
    cfg: &SolverConfig,
    f0: &Volume,
    opts: &DistributedOptions,
    sink: Option<SharedSink>,
) -> Result<DistributedOutput> {
    cfg.validate()?;
    params.validate()?;
    if f0.slices() != ctx.slices() || f0.side() != ctx.side() {
        return Err(TomoError::DimensionMismatch {
            what: "initial estimate voxels",
            expected: ctx.slices() * ctx.side() * ctx.side(),
            found: f0.data().len(),
        }
        .into());
    }
    if opts.workers == 0 || opts.workers > ctx.slices() {
        return Err(ParallelError::Partition {
            slices: ctx.slices(),
            workers: opts.workers,
        });
    }
    let workers = effective_workers(opts.workers, ctx.slices());
    let parts = partition(ctx.slices(), workers)?;
    let stencil = NeighborStencil::for_slices(ctx.slices());
    let lipschitz = match cfg.lipschitz {
        Some(l) => l,
        None => estimate_lipschitz(ctx.psf(), params, &stencil)?,
    };
    let run = Run {
        ctx,
        params,
        cfg,
        f0,
        stencil: &stencil,
        lipschitz,
        capture: opts.capture_states,
    };
    let (slabs, records, states, stats) = match opts.transport {
        TransportKind::Channel => run.go(channel_mesh(workers, opts.timeout), &parts, sink)?,
        TransportKind::Tcp => run.go(tcp_mesh(workers, opts.timeout)?, &parts, sink)?,
    };
    let mut data = Vec::with_capacity(f0.data().len());
    for s in slabs {
        data.extend(s.into_data());
    }
    let volume = Volume::new(ctx.slices(), ctx.side(), data)?;
    Ok(DistributedOutput {
        volume,
        records,
        lipschitz,
        workers,
        stats,
        states,
    })
}

struct Run<'a> {
    ctx: &'a FidelityContext,
    params: &'a QggmrfParams,
    cfg: &'a SolverConfig,
    f0: &'a Volume,
    stencil: &'a NeighborStencil,
    lipschitz: f64,
    capture: bool,
}

type Gathered = (Vec<Volume>, Vec<IterationRecord>, Vec<Volume>, Arc<TransportStats>);

impl Run<'_> {
    fn go<E: Endpoint>(&self, endpoints: Vec<E>, parts: &[SlabPartition], sink: Option<SharedSink>) -> Result<Gathered> {
        let stats = Arc::clone(endpoints[0].stats());
        let workers = parts.len();
        // iteration -> per-worker slab iterate; observation only, not part of the protocol
        let snapshots: Mutex<BTreeMap<usize, Vec<Option<Vec<f64>>>>> = Mutex::new(BTreeMap::new());
        let mut sink = sink;
        let results: Vec<Result<(Volume, Vec<IterationRecord>)>> = std::thread::scope(|scope| {
            let snapshots = &snapshots;
            let mut handles = Vec::with_capacity(workers);
            for (ep, part) in endpoints.into_iter().zip(parts) {
                let worker_sink = if part.worker_id == 0 { sink.take() } else { None };
                handles.push(scope.spawn(move || self.worker(ep, part, worker_sink, snapshots)));
            }
            handles
                .into_iter()
                .enumerate()
                .map(|(w, h)| {
                    h.join()
                        .unwrap_or_else(|e| Err(ParallelError::WorkerPanic(w, panic_message(&e))))
                })
                .collect()
        });
        // report the root cause rather than the peers' timeouts
        let mut slabs = Vec::with_capacity(workers);
        let mut records = None;
        let mut first_err = None;
        for r in results {
            match r {
                Ok((v, rec)) => {
                    records.get_or_insert(rec);
                    slabs.push(v);
                }
                Err(e) => {
                    let is_comm = matches!(e, ParallelError::Core(TomoError::Communication(_)));
                    match &first_err {
                        None => first_err = Some(e),
                        Some(ParallelError::Core(TomoError::Communication(_))) if !is_comm => first_err = Some(e),
                        _ => {}
                    }
                }
            }
        }
        if let Some(e) = first_err {
            return Err(e);
        }
        let side = self.ctx.side();
        let states = snapshots
            .into_inner()
            .unwrap_or_else(|p| p.into_inner())
            .into_values()
            .map(|parts| {
                let data: Vec<f64> = parts.into_iter().flat_map(|p| p.unwrap_or_default()).collect();
                Volume::new(self.ctx.slices(), side, data)
            })
            .collect::<tomoforge_core::Result<Vec<_>>>()?;
        Ok((slabs, records.unwrap_or_default(), states, stats))
    }

    fn worker<E: Endpoint>(
        &self,
        ep: E,
        part: &SlabPartition,
        sink: Option<SharedSink>,
        snapshots: &Mutex<BTreeMap<usize, Vec<Option<Vec<f64>>>>>,
    ) -> Result<(Volume, Vec<IterationRecord>)> {
        let ctx = self.ctx.sub_range(part.begin, part.end);
        let f0 = self.f0.sub_volume(part.begin, part.end);
        let mut comm = TransportComm::new(ep, part.clone());
        let problem = SlabProblem {
            ctx: &ctx,
            params: *self.params,
            stencil: self.stencil,
            lipschitz: self.lipschitz,
        };
        let cfg = SolverConfig {
            log_every: if part.worker_id == 0 { self.cfg.log_every } else { 0 },
            ..self.cfg.clone()
        };
        let workers = comm.endpoint().workers();
        let id = part.worker_id;
        let mut capture = |iter: usize, slab: &[f64]| {
            let mut g = snapshots.lock().unwrap_or_else(|p| p.into_inner());
            g.entry(iter).or_insert_with(|| vec![None; workers])[id] = Some(slab.to_vec());
        };
        let mut forward = sink.map(|s| move |r: &IterationRecord| s(r));
        let hooks = SlabHooks {
            record: forward.as_mut().map(|f| f as &mut dyn FnMut(&IterationRecord)),
            state: if self.capture { Some(&mut capture) } else { None },
        };
        Ok(solve_slab(&problem, &cfg, f0, &mut comm, hooks)?)
    }
}

/// Level solver for the multi-resolution driver that splits every level
/// into slabs.
pub struct ParallelLevelSolver<'a> {
    pub options: DistributedOptions,
    pub sink: Option<SharedSink<'a>>,
    pub stats: Vec<Arc<TransportStats>>,
}

impl<'a> ParallelLevelSolver<'a> {
    pub fn new(options: DistributedOptions) -> Self {
        Self {
            options,
            sink: None,
            stats: Vec::new(),
        }
    }
}

impl LevelSolver for ParallelLevelSolver<'_> {
    fn solve_level(
        &mut self,
        level: usize,
        op: &RadonOperator,
        sino: &Sinogram,
        params: &QggmrfParams,
        cfg: &SolverConfig,
        f0: &Volume,
    ) -> tomoforge_core::Result<SolveOutput> {
        let psf = Arc::new(PsfKernel::for_operator(op)?);
        let ctx = FidelityContext::new(op, psf, sino)?;
        let opts = DistributedOptions {
            workers: self.options.workers.min(ctx.slices()),
            capture_states: false,
            ..self.options.clone()
        };
        let mut tagged = self.sink.as_mut().map(|s| {
            move |r: &IterationRecord| {
                let mut r = r.clone();
                r.level = level;
                s(&r)
            }
        });
        let out = distributed_solve(&ctx, params, cfg, f0, &opts, tagged.as_mut().map(|f| f as SharedSink))
            .map_err(|e| match e {
                ParallelError::Core(e) => e,
                other => TomoError::Communication(other.to_string()),
            })?;
        self.stats.push(out.stats);
        Ok(SolveOutput {
            volume: out.volume,
            records: out.records,
            lipschitz: out.lipschitz,
        })
    }
}
