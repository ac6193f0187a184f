use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use serde::Serialize;
use tomoforge_core::geometry::{ScanGeometry, Sinogram, Volume};
use tomoforge_core::multires::{solve_hierarchical, GridHierarchy, HierarchyOptions};
use tomoforge_core::phantom::{disk_phantom, shepp_logan, shepp_logan_3d};
use tomoforge_core::qggmrf::{sigma_from_range, QggmrfParams};
use tomoforge_core::radon::RadonOperator;
use tomoforge_core::solver::IterationRecord;
use tomoforge_core::toeplitz::{FidelityContext, PsfKernel};
use tomoforge_parallel::{distributed_solve, run_pipeline, DistributedOptions, ParallelLevelSolver, TransportKind};

use crate::bench::{self, InitBench, MultiresBench, ScalingBench, ToeplitzBench};
use crate::cli::*;
use crate::error::{CliError, Result};
use crate::export::export_slice;
use crate::io;
use crate::plan::{config_hash, InitKind, ReconPlan};
use crate::report::{write_log, write_table, Metadata};

const QUEUE_DEPTH: usize = 2;

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Phantom(a) => phantom(&a),
        Command::Project(a) => project(&a),
        Command::Fbp(a) => fbp(&a),
        Command::Mbir(a) => mbir(&a).map(|_| ()),
        Command::Bench(a) => bench(&a),
        Command::Export(a) => {
            let (path, w) = export(&a)?;
            println!("{} (window {} .. {})", path.display(), w.lo, w.hi);
            Ok(())
        }
    }
}

pub fn phantom(a: &PhantomArgs) -> Result<()> {
    if a.slices == 0 {
        return Err(CliError::Usage("--slices must be at least 1".into()));
    }
    let vol = match a.kind {
        PhantomKind::SheppLogan if a.slices == 1 => shepp_logan(a.side)?.into(),
        PhantomKind::SheppLogan => shepp_logan_3d(a.side, a.slices)?,
        PhantomKind::Disk => {
            let disk = disk_phantom(a.side, a.radius.unwrap_or(a.side as f64 / 4.0), a.value)?;
            let planes = vec![disk; a.slices];
            Volume::from_slices(&planes)?
        }
    };
    io::save_volume(&a.out, &vol)
}

/// Runs `f` on every slice through the three-stage pipeline: slices are
/// staged on one thread, processed on another and collected on a third.
fn per_slice<I, F>(count: usize, input: I, f: F) -> Result<Vec<f64>>
where
    I: Fn(usize) -> Vec<f64> + Sync,
    F: Fn(&[f64]) -> tomoforge_core::Result<Vec<f64>> + Sync,
{
    // keep the typed error: the pipeline only carries its message
    let first: Mutex<Option<CliError>> = Mutex::new(None);
    let keep = |e: tomoforge_core::TomoError| {
        let e = CliError::from(e);
        first.lock().unwrap_or_else(|p| p.into_inner()).get_or_insert(e.clone());
        e
    };
    let out = run_pipeline(
        (0..count).collect(),
        |_, z| Ok::<_, CliError>(input(z)),
        |_, plane| f(&plane).map_err(keep),
        |_, result| Ok(result),
        QUEUE_DEPTH,
    );
    match out {
        Ok(parts) => Ok(parts.into_iter().flat_map(|(_, v)| v).collect()),
        Err(e) => Err(first.into_inner().unwrap_or_else(|p| p.into_inner()).unwrap_or_else(|| e.into())),
    }
}

pub fn project(a: &ProjectArgs) -> Result<()> {
    let vol = io::load_volume(&a.input)?;
    let bins = a.bins.unwrap_or(vol.side());
    if a.angles == 0 {
        return Err(CliError::Usage("--angles must be at least 1".into()));
    }
    if !(a.noise >= 0.0 && a.noise.is_finite()) {
        return Err(CliError::Usage(format!("--noise {} must be non-negative", a.noise)));
    }
    let geom = ScanGeometry::uniform(a.angles, bins, vol.side())?.with_detector_offset(a.offset);
    let op = RadonOperator::with_tolerance(&geom, a.tolerance)?;
    let data = per_slice(vol.slices(), |z| vol.slice(z).to_vec(), |plane| op.forward_slice(plane))?;
    let mut sino = Sinogram::new(geom.angles().to_vec(), bins, vol.slices(), data)?.with_detector_offset(a.offset);
    bench::add_noise(&mut sino, a.noise, a.seed);
    io::save_sinogram(&a.out, &sino)
}

pub fn fbp(a: &FbpArgs) -> Result<()> {
    let sino = io::load_sinogram(&a.sino)?;
    let side = a.side.unwrap_or(sino.detector_bins());
    let op = RadonOperator::new(&sino.geometry(side)?)?;
    let data = per_slice(
        sino.slices(),
        |z| sino.slice(z).to_vec(),
        |plane| {
            let one = Sinogram::new(sino.angles().to_vec(), sino.detector_bins(), 1, plane.to_vec())?
                .with_detector_offset(sino.detector_offset());
            Ok(op.fbp_volume(&one)?.into_data())
        },
    )?;
    io::save_volume(&a.out, &Volume::new(sino.slices(), side, data)?)
}

/// What `mbir` ran, for logs and tests.
#[derive(Clone, Debug, Serialize)]
pub struct MbirRun {
    pub plan: ReconPlan,
    pub sinogram: PathBuf,
    pub image_side: usize,
    pub sigma: f64,
    pub workers: usize,
    #[serde(skip)]
    pub records: Vec<IterationRecord>,
}

pub fn resolve_plan(a: &MbirArgs) -> Result<ReconPlan> {
    let mut plan = match &a.plan {
        Some(p) => ReconPlan::load(p)?,
        None => ReconPlan::default(),
    };
    if let Some(init) = a.init {
        plan.init = init;
    }
    if let Some(l) = a.levels {
        plan.hierarchy.levels = l;
        if plan.hierarchy.iters.as_ref().is_some_and(|it| it.len() != l) {
            log::warn!("--levels {l} overrides the plan's per-level budgets");
            plan.hierarchy.iters = None;
        }
    }
    if let Some(w) = a.workers {
        plan.parallel.workers = w;
    }
    if let Some(t) = &a.transport {
        plan.parallel.transport = t.clone();
    }
    if let Some(s) = &a.sino {
        plan.inputs.sinogram = Some(s.clone());
    }
    plan.validate()?;
    Ok(plan)
}

pub fn mbir(a: &MbirArgs) -> Result<MbirRun> {
    let plan = resolve_plan(a)?;
    let sino_path = plan
        .inputs
        .sinogram
        .clone()
        .ok_or_else(|| CliError::Usage("no sinogram: pass --sino or set inputs.sinogram in the plan".into()))?;
    let sino = io::load_sinogram(&sino_path)?;
    let side = plan.geometry.image_side.unwrap_or(sino.detector_bins());
    let op = RadonOperator::with_tolerance(&sino.geometry(side)?, plan.geometry.tolerance)?;
    let fbp = if plan.init == InitKind::Fbp || plan.prior.sigma.is_none() {
        Some(op.fbp_volume(&sino)?)
    } else {
        None
    };
    let sigma = match (plan.prior.sigma, &fbp) {
        (Some(s), _) => s,
        (None, Some(f)) => sigma_from_range(f.data()),
        (None, None) => unreachable!("FBP is computed when sigma is absent"),
    };
    let pr = &plan.prior;
    let params = QggmrfParams {
        p: pr.p,
        q: pr.q,
        t: pr.t,
        sigma,
        lambda: pr.lambda,
    };
    params.validate()?;
    let transport: TransportKind = plan.parallel.transport.parse().map_err(CliError::Usage)?;
    let mut workers = plan.parallel.workers;
    if workers > sino.slices() {
        log::warn!("{workers} workers for {} slices; using {}", sino.slices(), sino.slices());
        workers = sino.slices();
    }
    let opts = DistributedOptions {
        workers,
        transport,
        ..Default::default()
    };
    let levels = plan.hierarchy.levels;
    let (volume, records, used_workers) = if levels == 1 {
        let f0 = match plan.init {
            InitKind::Fbp => fbp.expect("computed for fbp init"),
            InitKind::Zero => Volume::zeros(sino.slices(), side),
        };
        let psf = Arc::new(PsfKernel::for_operator(&op)?);
        let ctx = FidelityContext::new(&op, psf, &sino)?;
        let out = distributed_solve(&ctx, &params, &plan.solver, &f0, &opts, None)?;
        (out.volume, out.records, out.workers)
    } else {
        drop(op);
        let iters = plan.hierarchy.iters.clone().unwrap_or_else(|| {
            let mut v: Vec<usize> = (0..levels - 1).map(|l| (200usize >> l).max(1)).collect();
            v.push(plan.solver.max_iters);
            v
        });
        let sides = GridHierarchy::new(side, levels - 1)?.levels().to_vec();
        let hierarchy = GridHierarchy::with_iters(sides, iters)?;
        let hopts = HierarchyOptions {
            fbp_init: plan.init == InitKind::Fbp,
            downsample_angles: plan.hierarchy.downsample_angles,
            tolerance: plan.geometry.tolerance,
        };
        let mut solver = ParallelLevelSolver::new(opts);
        let out = solve_hierarchical(&sino, &hierarchy, &params, &plan.solver, &hopts, &mut solver)?;
        let used = out.records.last().map_or(workers, |r| r.workers);
        (out.volume, out.records, used)
    };
    io::save_volume(&a.out, &volume)?;
    let run = MbirRun {
        plan,
        sinogram: sino_path,
        image_side: side,
        sigma,
        workers: used_workers,
        records,
    };
    if let Some(log_path) = &a.log {
        let meta = Metadata::new(run.plan.seeds.run, config_hash(&run))
            .with("levels", levels)
            .with("workers", run.workers);
        write_log(log_path, &meta, &run.records)?;
    }
    let last = run.records.last().expect("solver records iteration 0");
    log::info!(
        "done after {} iterations: objective {:.6e}, fidelity {:.6e}",
        run.records.len() - 1,
        last.objective,
        last.fidelity
    );
    Ok(run)
}

pub fn bench(a: &BenchArgs) -> Result<()> {
    let first_size = a.sizes.first().copied();
    match a.kind {
        BenchKind::Toeplitz => {
            let mut cfg = ToeplitzBench::default();
            if !a.sizes.is_empty() {
                cfg.sizes = a.sizes.clone();
            }
            if let Some(p) = a.angles {
                cfg.angles = p;
            }
            if let Some(s) = a.seed {
                cfg.seed = s;
            }
            let rows = bench::toeplitz_bench(&cfg)?;
            let meta = Metadata::new(cfg.seed, config_hash(&cfg)).with("bench", "toeplitz");
            write_table(&a.out, &meta, &rows)
        }
        BenchKind::Init => {
            let mut cfg = InitBench::default();
            apply_scenario(&mut cfg.scenario, first_size, a);
            if let Some(i) = a.iters {
                cfg.iters = i;
                cfg.target_iter = cfg.target_iter.min(i);
            }
            let r = bench::init_bench(&cfg)?;
            let meta = Metadata::new(cfg.scenario.seed, config_hash(&cfg))
                .with("bench", "init")
                .with("iter0_ratio", format!("{:.4}", r.iter0_ratio()))
                .with("target_iter", cfg.target_iter)
                .with("iterations_saved", r.iterations_saved().map_or("unreached".into(), |s| s.to_string()));
            write_table(&a.out, &meta, &r.rows())
        }
        BenchKind::Multires => {
            let mut cfg = MultiresBench::default();
            apply_scenario(&mut cfg.scenario, first_size, a);
            if let Some(i) = a.iters {
                cfg.single_iters = i;
            }
            let r = bench::multires_bench(&cfg)?;
            let meta = Metadata::new(cfg.scenario.seed, config_hash(&cfg))
                .with("bench", "multires")
                .with("single_fine_iters", r.single_fine_iters())
                .with("multires_fine_iters", r.multi_fine_iters().map_or("unreached".into(), |k| k.to_string()));
            write_table(&a.out, &meta, &r.rows())
        }
        BenchKind::Scaling => {
            let mut cfg = ScalingBench::default();
            if let Some(n) = first_size {
                cfg.n = n;
                cfg.slices = n;
            }
            if let Some(s) = a.slices {
                cfg.slices = s;
            }
            if let Some(p) = a.angles {
                cfg.angles = p;
            }
            if !a.workers.is_empty() {
                cfg.workers = a.workers.clone();
            }
            if let Some(i) = a.iters {
                cfg.iters = i;
            }
            if let Some(t) = &a.transport {
                cfg.transport = t.clone();
            }
            let r = bench::scaling_bench(&cfg)?;
            let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
            let meta = Metadata::new(0, config_hash(&cfg)).with("bench", "scaling").with("cores", cores);
            write_table(&a.out, &meta, &r.rows)
        }
    }
}

fn apply_scenario(s: &mut bench::Scenario, side: Option<usize>, a: &BenchArgs) {
    if let Some(n) = side {
        s.n = n;
    }
    if let Some(p) = a.angles {
        s.angles = p;
    }
    if let Some(seed) = a.seed {
        s.seed = seed;
    }
}

pub fn export(a: &ExportArgs) -> Result<(PathBuf, crate::export::Window)> {
    let vol = io::load_volume(&a.input)?;
    let z = a.slice.unwrap_or(vol.slices() / 2);
    if z >= vol.slices() {
        return Err(CliError::Usage(format!("slice {z} outside 0..{}", vol.slices())));
    }
    export_slice(vol.slice(z), vol.side(), &a.out)
}
