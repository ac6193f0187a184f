//! Desk-scale benchmark scenarios: Toeplitz vs direct gradients, FBP vs zero
//! initialization, multi-resolution vs single-grid, and slab scaling.
//!
//! Each scenario returns structured results; the `bench` subcommand turns
//! them into CSV and the acceptance tests assert on them.

use std::sync::Arc;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};
use tomoforge_core::geometry::{ScanGeometry, Sinogram, Volume};
use tomoforge_core::multires::{solve_hierarchical, GridHierarchy, HierarchyOptions, SerialLevelSolver};
use tomoforge_core::phantom::{shepp_logan, shepp_logan_3d};
use tomoforge_core::qggmrf::{NeighborStencil, QggmrfParams};
use tomoforge_core::radon::RadonOperator;
use tomoforge_core::solver::{estimate_lipschitz, solve_with_sink, IterationRecord, SolverConfig};
use tomoforge_core::toeplitz::{direct_fidelity, FidelityContext, PsfKernel};
use tomoforge_parallel::{distributed_solve, DistributedOptions, TransportKind};

use crate::error::Result;

/// Adds `N(0, (rel * peak)^2)` noise from a seeded stream.
pub fn add_noise(sino: &mut Sinogram, rel: f64, seed: u64) {
    if rel <= 0.0 {
        return;
    }
    let peak = sino.data().iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let dist = Normal::new(0.0, rel * peak).expect("finite noise level");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sino.data_mut().iter_mut().for_each(|v| *v += dist.sample(&mut rng));
}

/// Shepp-Logan slice, its operator and a noisy sinogram with `angles`
/// projections on `n` bins.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub n: usize,
    pub angles: usize,
    pub noise_rel: f64,
    pub seed: u64,
    pub sigma: f64,
    pub lambda: f64,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            n: 256,
            angles: 60,
            noise_rel: 0.01,
            seed: 7,
            sigma: 0.1,
            lambda: 1.0,
        }
    }
}

impl Scenario {
    pub fn build(&self) -> Result<(RadonOperator, Sinogram)> {
        let op = RadonOperator::new(&ScanGeometry::uniform(self.angles, self.n, self.n)?)?;
        let mut sino = op.forward_project(&shepp_logan(self.n)?)?;
        add_noise(&mut sino, self.noise_rel, self.seed);
        Ok((op, sino))
    }

    pub fn params(&self) -> Result<QggmrfParams> {
        Ok(QggmrfParams::new(self.sigma, self.lambda)?)
    }
}

// Toeplitz ------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToeplitzBench {
    pub sizes: Vec<usize>,
    pub angles: usize,
    /// Timings are the fastest of this many calls.
    pub repeats: usize,
    pub seed: u64,
}

impl Default for ToeplitzBench {
    fn default() -> Self {
        Self {
            sizes: vec![32, 64, 128, 256, 512],
            angles: 45,
            repeats: 3,
            seed: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToeplitzRow {
    pub n: usize,
    pub angles: usize,
    /// One forward + adjoint projection (A).
    pub direct_s: f64,
    /// One Toeplitz gradient (B).
    pub toeplitz_s: f64,
    pub psf_setup_s: f64,
    pub speedup: f64,
    /// Relative differences of loss and gradient (C).
    pub loss_rel_diff: f64,
    pub grad_rel_diff: f64,
}

fn fastest<T>(repeats: usize, mut f: impl FnMut() -> Result<T>) -> Result<(T, f64)> {
    let mut best = f64::INFINITY;
    let mut out = None;
    for _ in 0..repeats.max(1) {
        let t = Instant::now();
        let v = f()?;
        best = best.min(t.elapsed().as_secs_f64());
        out = Some(v);
    }
    Ok((out.expect("at least one run"), best))
}

fn rel_l2(reference: &[f64], other: &[f64]) -> f64 {
    let num: f64 = reference.iter().zip(other).map(|(a, b)| (a - b) * (a - b)).sum();
    let den: f64 = reference.iter().map(|a| a * a).sum();
    (num / den.max(f64::MIN_POSITIVE)).sqrt()
}

pub fn toeplitz_bench(cfg: &ToeplitzBench) -> Result<Vec<ToeplitzRow>> {
    let mut rows = Vec::with_capacity(cfg.sizes.len());
    for &n in &cfg.sizes {
        let op = RadonOperator::new(&ScanGeometry::uniform(cfg.angles, n, n)?)?;
        let sino = op.forward_project(&shepp_logan(n)?)?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ n as u64);
        let unit = Uniform::new(0.0, 1.0).expect("valid range");
        let f: Vec<f64> = (0..n * n).map(|_| unit.sample(&mut rng)).collect();

        let t = Instant::now();
        let psf = Arc::new(PsfKernel::for_operator(&op)?);
        let ctx = FidelityContext::new(&op, psf.clone(), &sino)?;
        let psf_setup_s = t.elapsed().as_secs_f64();

        let ((loss_a, grad_a), direct_s) = fastest(cfg.repeats, || Ok(direct_fidelity(&op, &f, sino.data())?))?;
        let ((loss_b, grad_b), toeplitz_s) = fastest(cfg.repeats, || {
            let kf = psf.apply_slice(&f)?;
            let mut g = vec![0.0; n * n];
            ctx.slice_grad(0, &kf, &mut g);
            Ok((ctx.slice_loss(0, &f, &kf), g))
        })?;
        let row = ToeplitzRow {
            n,
            angles: cfg.angles,
            direct_s,
            toeplitz_s,
            psf_setup_s,
            speedup: direct_s / toeplitz_s,
            loss_rel_diff: (loss_a - loss_b).abs() / loss_a.abs(),
            grad_rel_diff: rel_l2(&grad_a, &grad_b),
        };
        log::info!("toeplitz n={n}: direct {direct_s:.4}s, toeplitz {toeplitz_s:.4}s, loss diff {:.2e}", row.loss_rel_diff);
        rows.push(row);
    }
    Ok(rows)
}

// Initialization ------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InitBench {
    pub scenario: Scenario,
    pub iters: usize,
    /// The target residual is the zero-initialized run's fidelity here.
    pub target_iter: usize,
}

impl Default for InitBench {
    fn default() -> Self {
        Self {
            scenario: Scenario::default(),
            iters: 100,
            target_iter: 50,
        }
    }
}

#[derive(Clone, Debug)]
pub struct InitResult {
    pub zero: Vec<IterationRecord>,
    pub fbp: Vec<IterationRecord>,
    pub target_iter: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InitRow {
    pub iter: usize,
    pub zero_fidelity: f64,
    pub fbp_fidelity: f64,
    pub zero_objective: f64,
    pub fbp_objective: f64,
}

/// First iteration whose fidelity is at or below `target`.
pub fn first_reaching(records: &[IterationRecord], target: f64) -> Option<usize> {
    records.iter().find(|r| r.fidelity <= target).map(|r| r.iter)
}

impl InitResult {
    pub fn iter0_ratio(&self) -> f64 {
        self.zero[0].fidelity / self.fbp[0].fidelity
    }

    pub fn target(&self) -> f64 {
        self.zero[self.target_iter].fidelity
    }

    /// Iterations the FBP start saves in reaching [`Self::target`]; `None`
    /// if it never gets there within its budget.
    pub fn iterations_saved(&self) -> Option<i64> {
        first_reaching(&self.fbp, self.target()).map(|k| self.target_iter as i64 - k as i64)
    }

    pub fn rows(&self) -> Vec<InitRow> {
        self.zero
            .iter()
            .zip(&self.fbp)
            .map(|(z, f)| InitRow {
                iter: z.iter,
                zero_fidelity: z.fidelity,
                fbp_fidelity: f.fidelity,
                zero_objective: z.objective,
                fbp_objective: f.objective,
            })
            .collect()
    }
}

pub fn init_bench(cfg: &InitBench) -> Result<InitResult> {
    let (op, sino) = cfg.scenario.build()?;
    let params = cfg.scenario.params()?;
    let psf = Arc::new(PsfKernel::for_operator(&op)?);
    let ctx = FidelityContext::new(&op, psf, &sino)?;
    let n = cfg.scenario.n;
    let lipschitz = estimate_lipschitz(ctx.psf(), &params, &NeighborStencil::for_slices(1))?;
    // no early stop: both curves span the full budget
    let solver = SolverConfig {
        max_iters: cfg.iters,
        tol: 1e-15,
        lipschitz: Some(lipschitz),
        ..Default::default()
    };
    let zero = solve_with_sink(&ctx, &params, &solver, &Volume::zeros(1, n), None)?;
    let fbp0 = op.fbp_volume(&sino)?;
    let fbp = solve_with_sink(&ctx, &params, &solver, &fbp0, None)?;
    Ok(InitResult {
        zero: zero.records,
        fbp: fbp.records,
        target_iter: cfg.target_iter.min(cfg.iters),
    })
}

// Multi-resolution -----------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MultiresBench {
    pub scenario: Scenario,
    pub single_iters: usize,
    /// Budgets of the hierarchy, coarse to fine.
    pub level_iters: Vec<usize>,
}

impl Default for MultiresBench {
    fn default() -> Self {
        Self {
            scenario: Scenario::default(),
            single_iters: 200,
            level_iters: vec![100, 50, 200],
        }
    }
}

/// A record with the wall time since the run started.
#[derive(Clone, Debug)]
pub struct Timed {
    pub record: IterationRecord,
    pub elapsed: f64,
}

#[derive(Clone, Debug)]
pub struct MultiresResult {
    pub single: Vec<Timed>,
    pub multi: Vec<Timed>,
    pub finest_level: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MultiresRow {
    pub run: String,
    pub level: usize,
    pub iter: usize,
    pub fidelity: f64,
    pub objective: f64,
    pub elapsed_s: f64,
}

impl MultiresResult {
    /// Final fidelity of the single-grid run.
    pub fn target(&self) -> f64 {
        self.single.last().expect("single run has records").record.fidelity
    }

    pub fn single_fine_iters(&self) -> usize {
        self.single.last().map_or(0, |t| t.record.iter)
    }

    pub fn single_wall(&self) -> f64 {
        self.single.last().map_or(0.0, |t| t.elapsed)
    }

    fn hit(&self) -> Option<&Timed> {
        let target = self.target();
        self.multi
            .iter()
            .find(|t| t.record.level == self.finest_level && t.record.fidelity <= target)
    }

    /// Finest-grid iterations the hierarchy needs to reach [`Self::target`].
    pub fn multi_fine_iters(&self) -> Option<usize> {
        self.hit().map(|t| t.record.iter)
    }

    /// Wall time from the start of the hierarchy to that point.
    pub fn multi_wall(&self) -> Option<f64> {
        self.hit().map(|t| t.elapsed)
    }

    pub fn records(&self) -> impl Iterator<Item = &IterationRecord> {
        self.single.iter().chain(&self.multi).map(|t| &t.record)
    }

    pub fn rows(&self) -> Vec<MultiresRow> {
        let row = |run: &str, t: &Timed| MultiresRow {
            run: run.into(),
            level: t.record.level,
            iter: t.record.iter,
            fidelity: t.record.fidelity,
            objective: t.record.objective,
            elapsed_s: t.elapsed,
        };
        let mut rows: Vec<_> = self.single.iter().map(|t| row("single", t)).collect();
        rows.extend(self.multi.iter().map(|t| row("multires", t)));
        rows
    }
}

/// Both runs start from zero and are timed end to end, operator and kernel
/// setup included.
pub fn multires_bench(cfg: &MultiresBench) -> Result<MultiresResult> {
    let (_, sino) = cfg.scenario.build()?;
    let params = cfg.scenario.params()?;
    let n = cfg.scenario.n;
    let solver = SolverConfig {
        max_iters: cfg.single_iters,
        tol: 1e-15,
        ..Default::default()
    };

    let mut single = Vec::new();
    let start = Instant::now();
    {
        let op = RadonOperator::new(&sino.geometry(n)?)?;
        let psf = Arc::new(PsfKernel::for_operator(&op)?);
        let ctx = FidelityContext::new(&op, psf, &sino)?;
        let mut sink = |r: &IterationRecord| {
            single.push(Timed {
                record: r.clone(),
                elapsed: start.elapsed().as_secs_f64(),
            })
        };
        solve_with_sink(&ctx, &params, &solver, &Volume::zeros(1, n), Some(&mut sink))?;
    }

    let levels = cfg.level_iters.len();
    let sides = GridHierarchy::new(n, levels.saturating_sub(1))?.levels().to_vec();
    let hierarchy = GridHierarchy::with_iters(sides, cfg.level_iters.clone())?;
    let mut multi = Vec::new();
    let start = Instant::now();
    {
        let mut sink = |r: &IterationRecord| {
            multi.push(Timed {
                record: r.clone(),
                elapsed: start.elapsed().as_secs_f64(),
            })
        };
        let mut level_solver = SerialLevelSolver { sink: Some(&mut sink) };
        solve_hierarchical(&sino, &hierarchy, &params, &solver, &HierarchyOptions::default(), &mut level_solver)?;
    }
    Ok(MultiresResult {
        single,
        multi,
        finest_level: levels - 1,
    })
}

// Scaling --------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingBench {
    pub n: usize,
    pub slices: usize,
    pub angles: usize,
    pub workers: Vec<usize>,
    pub iters: usize,
    pub transport: String,
}

impl Default for ScalingBench {
    fn default() -> Self {
        Self {
            n: 128,
            slices: 128,
            angles: 60,
            workers: vec![1, 2, 4],
            iters: 10,
            transport: "channel".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub workers: usize,
    pub wall_s: f64,
    pub speedup: f64,
    pub iterations: usize,
    pub halo_messages: u64,
    pub reduction_messages: u64,
}

#[derive(Clone, Debug)]
pub struct ScalingResult {
    pub rows: Vec<ScalingRow>,
    pub records: Vec<Vec<IterationRecord>>,
}

pub fn scaling_bench(cfg: &ScalingBench) -> Result<ScalingResult> {
    let transport: TransportKind = cfg.transport.parse().map_err(crate::error::CliError::Usage)?;
    let op = RadonOperator::new(&ScanGeometry::uniform(cfg.angles, cfg.n, cfg.n)?)?;
    let sino = op.forward_volume(&shepp_logan_3d(cfg.n, cfg.slices)?)?;
    let psf = Arc::new(PsfKernel::for_operator(&op)?);
    let ctx = FidelityContext::new(&op, psf, &sino)?;
    let params = QggmrfParams::new(0.1, 1.0)?;
    let lipschitz = estimate_lipschitz(ctx.psf(), &params, &NeighborStencil::for_slices(cfg.slices))?;
    let solver = SolverConfig {
        max_iters: cfg.iters,
        tol: 1e-15,
        lipschitz: Some(lipschitz),
        log_every: 0,
        ..Default::default()
    };
    let f0 = Volume::zeros(cfg.slices, cfg.n);
    let mut rows: Vec<ScalingRow> = Vec::new();
    let mut records = Vec::new();
    for &w in &cfg.workers {
        let opts = DistributedOptions {
            workers: w,
            transport,
            ..Default::default()
        };
        let t = Instant::now();
        let out = distributed_solve(&ctx, &params, &solver, &f0, &opts, None)?;
        let wall_s = t.elapsed().as_secs_f64();
        let base = rows.first().map_or(wall_s, |r| r.wall_s);
        log::info!("scaling: {} workers, {wall_s:.3}s", out.workers);
        rows.push(ScalingRow {
            workers: out.workers,
            wall_s,
            speedup: base / wall_s,
            iterations: out.records.len() - 1,
            halo_messages: out.stats.halo_messages(),
            reduction_messages: out.stats.reduction_messages(),
        });
        records.push(out.records);
    }
    Ok(ScalingResult { rows, records })
}
