//! Acceptance suite: one PASS/FAIL line per criterion, tolerances pinned
//! below. Criteria run one after another inside a single test so the timing
//! checks do not compete with each other for cores.

use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Uniform};

use tomoforge_cli::bench::{self, InitBench, InitResult, MultiresBench, MultiresResult, ScalingBench, ScalingResult, ToeplitzBench};
use tomoforge_core::geometry::{polar_sampling, ImageGrid, ScanGeometry, Volume};
use tomoforge_core::nufft::{direct_dft, NufftPlan};
use tomoforge_core::phantom::{disk_phantom, shepp_logan_3d};
use tomoforge_core::qggmrf::{prior_energy, prior_grad, NeighborStencil, QggmrfParams};
use tomoforge_core::radon::RadonOperator;
use tomoforge_core::solver::{descends_within_segments, IterationRecord, SolverConfig};
use tomoforge_core::toeplitz::{toeplitz_apply, FidelityContext, PsfKernel};
use tomoforge_parallel::{distributed_solve, run_pipeline, DistributedOptions};

// pinned tolerances
const ADJOINT_RTOL: f64 = 1e-6;
const TOEPLITZ_RTOL: f64 = 1e-5;
const DENSE_RTOL: f64 = 1e-5;
const CHORD_FRACTION: f64 = 0.15;
const FBP_RMSE: f64 = 0.05;
const INIT_RATIO: f64 = 1.5;
const INIT_SAVED: i64 = 10;
const MULTIRES_ITER_RATIO: f64 = 2.0;
const MULTIRES_WALL_RATIO: f64 = 1.5;
const PRIOR_FD_RTOL: f64 = 1e-4;
const DIST_ATOL: f64 = 1e-10;
const SCALING_SPEEDUP: f64 = 2.0;
const SCALING_MIN_CORES: usize = 4;
const PIPELINE_RATIO: f64 = 0.6;
const DESCENT_RTOL: f64 = 1e-9;

#[derive(Clone, Copy, PartialEq, Eq)]
enum Status {
    Pass,
    Fail,
    NotEvaluable,
}

struct Outcome {
    status: Status,
    detail: String,
}

fn verdict(ok: bool, detail: String) -> Outcome {
    Outcome {
        status: if ok { Status::Pass } else { Status::Fail },
        detail,
    }
}

fn within(t: Instant, limit_s: u64) -> (bool, String) {
    let e = t.elapsed();
    (e <= Duration::from_secs(limit_s), format!("{:.1}s (limit {limit_s}s)", e.as_secs_f64()))
}

fn line(id: usize, name: &str, o: &Outcome) {
    let tag = match o.status {
        Status::Pass => "PASS",
        Status::Fail => "FAIL",
        Status::NotEvaluable => "NOT EVALUABLE",
    };
    // written past the test harness' capture so the lines always show
    let mut err = std::io::stderr().lock();
    let _ = writeln!(err, "acceptance {id:>2} [{tag}] {name}: {}", o.detail);
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn random(rng: &mut ChaCha8Rng, len: usize, lo: f64, hi: f64) -> Vec<f64> {
    let d = Uniform::new(lo, hi).unwrap();
    (0..len).map(|_| d.sample(rng)).collect()
}

fn adjointness() -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst = 0.0_f64;
    for n in [16, 32, 64] {
        for angles in [8, 45, 90] {
            let op = RadonOperator::new(&ScanGeometry::uniform(angles, n, n).unwrap()).unwrap();
            for _ in 0..20 {
                let f = random(&mut rng, n * n, -1.0, 1.0);
                let g = random(&mut rng, op.sino_len(), -1.0, 1.0);
                let rf = op.forward_slice(&f).unwrap();
                let rtg = op.back_slice(&g).unwrap();
                worst = worst.max((dot(&rf, &g) - dot(&f, &rtg)).abs() / (norm(&rf) * norm(&g)));
            }
        }
    }
    let (fast, time) = within(t, 30);
    verdict(
        worst <= ADJOINT_RTOL && fast,
        format!("worst |<Rf,g>-<f,R*g>|/(|Rf||g|) = {worst:.2e} (<= {ADJOINT_RTOL:.0e}) over 180 pairs; {time}"),
    )
}

fn nufft_accuracy() -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    let mut ok = true;
    let mut parts = Vec::new();
    for eps in [1e-4, 1e-6, 1e-8] {
        let mut worst = 0.0_f64;
        for n in [16, 32, 64] {
            let sampling = Arc::new(polar_sampling(&ScanGeometry::uniform(45, n, n).unwrap()).unwrap());
            let plan = NufftPlan::new(n, sampling.clone(), eps).unwrap();
            let img = ImageGrid::new(n, random(&mut rng, n * n, -1.0, 1.0)).unwrap();
            let fast = plan.type2(&img).unwrap();
            let exact = direct_dft(&sampling, &img).unwrap();
            let num: f64 = fast.iter().zip(&exact).map(|(a, b)| (a - b).norm_sqr()).sum();
            let den: f64 = exact.iter().map(|b| b.norm_sqr()).sum();
            worst = worst.max((num / den).sqrt());
        }
        ok &= worst <= eps;
        parts.push(format!("eps {eps:.0e}: {worst:.2e}"));
    }
    let (fast, time) = within(t, 60);
    verdict(ok && fast, format!("worst relative L2 error per plan [{}]; {time}", parts.join(", ")))
}

fn toeplitz_equivalence() -> Outcome {
    let t = Instant::now();
    let rows = bench::toeplitz_bench(&ToeplitzBench {
        sizes: vec![32, 64, 128, 256, 512],
        angles: 45,
        repeats: 3,
        seed: 1,
    })
    .unwrap();
    let accurate = rows
        .iter()
        .filter(|r| r.n <= 256)
        .all(|r| r.loss_rel_diff <= TOEPLITZ_RTOL && r.grad_rel_diff <= TOEPLITZ_RTOL);
    let faster = rows.iter().filter(|r| r.n >= 256).all(|r| r.toeplitz_s < r.direct_s);
    let (fast, time) = within(t, 300);
    let table: Vec<String> = rows
        .iter()
        .map(|r| {
            format!(
                "N={} loss {:.1e} grad {:.1e} direct {:.1}ms toeplitz {:.1}ms",
                r.n,
                r.loss_rel_diff,
                r.grad_rel_diff,
                r.direct_s * 1e3,
                r.toeplitz_s * 1e3
            )
        })
        .collect();
    verdict(
        accurate && faster && fast,
        format!(
            "diffs <= {TOEPLITZ_RTOL:.0e} for N<=256: {accurate}; faster at 256/512: {faster}; [{}]; {time}",
            table.join("; ")
        ),
    )
}

fn dense_oracle() -> Outcome {
    let t = Instant::now();
    let n = 8;
    let op = RadonOperator::new(&ScanGeometry::uniform(6, n, n).unwrap()).unwrap();
    let psf = PsfKernel::for_operator(&op).unwrap();
    let cols: Vec<Vec<f64>> = (0..n * n)
        .map(|i| {
            let mut e = vec![0.0; n * n];
            e[i] = 1.0;
            op.forward_slice(&e).unwrap()
        })
        .collect();
    let (mut num, mut den) = (0.0, 0.0);
    for j in 0..n * n {
        let mut e = vec![0.0; n * n];
        e[j] = 1.0;
        let k = toeplitz_apply(&psf, &ImageGrid::new(n, e).unwrap()).unwrap();
        for i in 0..n * n {
            let ata = dot(&cols[i], &cols[j]);
            num += (k.data()[i] - ata).powi(2);
            den += ata * ata;
        }
    }
    let rel = (num / den).sqrt();
    let (fast, time) = within(t, 10);
    verdict(rel <= DENSE_RTOL && fast, format!("||K - A^T A||_F / ||A^T A||_F = {rel:.2e} (<= {DENSE_RTOL:.0e}); {time}"))
}

fn disk_chords() -> Outcome {
    let t = Instant::now();
    let (n, r) = (64, 16.0);
    let geom = ScanGeometry::uniform(90, n, n).unwrap();
    let op = RadonOperator::new(&geom).unwrap();
    let sino = op.forward_project(&disk_phantom(n, r, 1.0).unwrap()).unwrap();
    let peak = 2.0 * r;
    let mut worst = 0.0_f64;
    for a in 0..sino.n_angles() {
        for (j, &v) in sino.row(0, a).iter().enumerate() {
            let s = geom.bin_position(j);
            let chord = if s.abs() < r { 2.0 * (r * r - s * s).sqrt() } else { 0.0 };
            worst = worst.max((v - chord).abs());
        }
    }
    let (fast, time) = within(t, 10);
    verdict(
        worst <= CHORD_FRACTION * peak && fast,
        format!("worst chord error {:.3} of peak (<= {CHORD_FRACTION}) over 90 angles; {time}", worst / peak),
    )
}

fn fbp_fidelity() -> Outcome {
    let t = Instant::now();
    let (n, r) = (128, 40.0);
    let op = RadonOperator::new(&ScanGeometry::uniform(180, n, n).unwrap()).unwrap();
    let rec = op.fbp(&op.forward_project(&disk_phantom(n, r, 1.0).unwrap()).unwrap()).unwrap();
    let c = (n as f64 - 1.0) / 2.0;
    let (mut se, mut count) = (0.0, 0);
    for iy in 0..n {
        for ix in 0..n {
            let d = ((ix as f64 - c).powi(2) + (iy as f64 - c).powi(2)).sqrt();
            if d < r - 3.0 {
                se += (rec.get(ix, iy) - 1.0).powi(2);
                count += 1;
            }
        }
    }
    let rmse = (se / count as f64).sqrt();
    let (fast, time) = within(t, 30);
    verdict(
        rmse <= FBP_RMSE && fast,
        format!("interior RMSE {rmse:.4} of unit contrast (<= {FBP_RMSE}) on {count} px; {time}"),
    )
}

fn init_effect(r: &InitResult, elapsed: Duration) -> Outcome {
    let ratio = r.iter0_ratio();
    let saved = r.iterations_saved();
    let ok = ratio >= INIT_RATIO && saved.is_some_and(|s| s >= INIT_SAVED) && elapsed <= Duration::from_secs(300);
    verdict(
        ok,
        format!(
            "iteration-0 fidelity zero/FBP = {ratio:.2} (>= {INIT_RATIO}); target = zero-init fidelity at iteration {} \
             ({:.4e}); FBP reaches it at iteration {}, saving {} (>= {INIT_SAVED}); {:.1}s (limit 300s)",
            r.target_iter,
            r.target(),
            bench::first_reaching(&r.fbp, r.target()).map_or("never".into(), |k| k.to_string()),
            saved.map_or("n/a".into(), |s| s.to_string()),
            elapsed.as_secs_f64()
        ),
    )
}

fn multires_effect(r: &MultiresResult, elapsed: Duration) -> Outcome {
    let single_iters = r.single_fine_iters();
    let single_wall = r.single_wall();
    let (iter_ratio, wall_ratio) = match (r.multi_fine_iters(), r.multi_wall()) {
        (Some(k), Some(w)) => (single_iters as f64 / k.max(1) as f64, single_wall / w),
        _ => (0.0, 0.0),
    };
    let ok = iter_ratio >= MULTIRES_ITER_RATIO && wall_ratio >= MULTIRES_WALL_RATIO && elapsed <= Duration::from_secs(600);
    verdict(
        ok,
        format!(
            "single grid: {single_iters} iterations, {single_wall:.2}s to fidelity {:.4e}; 64/128/256: {} fine iterations, {} \
             -> iteration ratio {iter_ratio:.2} (>= {MULTIRES_ITER_RATIO}), wall ratio {wall_ratio:.2} (>= {MULTIRES_WALL_RATIO}); \
             {:.1}s (limit 600s)",
            r.target(),
            r.multi_fine_iters().map_or("never".into(), |k| k.to_string()),
            r.multi_wall().map_or("n/a".into(), |w| format!("{w:.2}s")),
            elapsed.as_secs_f64()
        ),
    )
}

fn prior_correctness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(109);
    let n = 8;
    let stencil = NeighborStencil::three_d();
    let mut worst = 0.0_f64;
    for (p, q) in [(2.0, 1.2), (1.6, 1.1)] {
        let params = QggmrfParams::new(0.3, 1.0).unwrap().with_shape(p, q, 1.0).unwrap();
        let vol = Volume::new(n, n, random(&mut rng, n * n * n, 0.0, 1.0)).unwrap();
        let g = prior_grad(&params, &stencil, &vol, None, None).unwrap();
        let h = 1e-6;
        let fd: Vec<f64> = (0..vol.data().len())
            .map(|i| {
                let mut up = vol.clone();
                up.data_mut()[i] += h;
                let mut dn = vol.clone();
                dn.data_mut()[i] -= h;
                (prior_energy(&params, &stencil, &up) - prior_energy(&params, &stencil, &dn)) / (2.0 * h)
            })
            .collect();
        let diff: Vec<f64> = fd.iter().zip(g.data()).map(|(a, b)| a - b).collect();
        worst = worst.max(norm(&diff) / norm(g.data()));
    }
    let params = QggmrfParams::new(0.3, 1.0).unwrap();
    let flat = Volume::new(n, n, vec![0.7; n * n * n]).unwrap();
    let zero = prior_grad(&params, &stencil, &flat, None, None).unwrap().data().iter().all(|&v| v == 0.0);
    verdict(
        worst <= PRIOR_FD_RTOL && zero,
        format!("gradient vs central differences {worst:.2e} (<= {PRIOR_FD_RTOL:.0e}) on 8x8x8; constant input gives exact zeros: {zero}"),
    )
}

fn distributed_exactness(descent: &mut Vec<Vec<IterationRecord>>) -> Outcome {
    let n = 64;
    let op = RadonOperator::new(&ScanGeometry::uniform(30, n, n).unwrap()).unwrap();
    let sino = op.forward_volume(&shepp_logan_3d(n, n).unwrap()).unwrap();
    let ctx = FidelityContext::new(&op, Arc::new(PsfKernel::for_operator(&op).unwrap()), &sino).unwrap();
    let params = QggmrfParams::new(0.1, 1.0).unwrap();
    let cfg = SolverConfig {
        max_iters: 6,
        tol: 1e-15,
        log_every: 0,
        ..Default::default()
    };
    let f0 = Volume::zeros(n, n);
    let run = |w| {
        let opts = DistributedOptions {
            workers: w,
            capture_states: true,
            ..Default::default()
        };
        distributed_solve(&ctx, &params, &cfg, &f0, &opts, None).unwrap()
    };
    let reference = run(1);
    let mut worst = 0.0_f64;
    let mut halos_ok = true;
    let mut no_fidelity_traffic = true;
    let mut counts = Vec::new();
    for w in [2, 4] {
        let out = run(w);
        for (a, b) in out.states.iter().zip(&reference.states) {
            worst = worst.max(a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max));
        }
        halos_ok &= out.states.len() == reference.states.len();
        let per_iter = out.stats.halo_by_iteration();
        halos_ok &= per_iter.len() == out.records.len() && per_iter.values().all(|&c| c == 2 * (w as u64 - 1));
        // every message is either a halo plane or a scalar reduction
        no_fidelity_traffic &= out.stats.total_messages() == out.stats.halo_messages() + out.stats.reduction_messages();
        counts.push(format!("W={w}: {:?}", per_iter.values().collect::<std::collections::BTreeSet<_>>()));
        descent.push(out.records);
    }
    descent.push(reference.records);
    verdict(
        worst <= DIST_ATOL && halos_ok && no_fidelity_traffic,
        format!(
            "max |state_W - state_1| over 6 iterations on 64^3 = {worst:.1e} (<= {DIST_ATOL:.0e}); halo messages per iteration {} \
             (expect 2(W-1)): {halos_ok}; only halo and reduction messages: {no_fidelity_traffic}",
            counts.join(", ")
        ),
    )
}

fn scaling_shape(r: &ScalingResult, elapsed: Duration) -> Outcome {
    let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
    let walls: Vec<String> = r.rows.iter().map(|row| format!("W={} {:.2}s", row.workers, row.wall_s)).collect();
    let speedup = r.rows.iter().find(|row| row.workers == 4).map_or(0.0, |row| row.speedup);
    let detail = format!(
        "128^3, 10 iterations: [{}]; 4-worker speedup {speedup:.2} (>= {SCALING_SPEEDUP}); {cores} core(s); {:.1}s (limit 600s)",
        walls.join(", "),
        elapsed.as_secs_f64()
    );
    if cores < SCALING_MIN_CORES {
        return Outcome {
            status: Status::NotEvaluable,
            detail: format!("{detail}; needs a host with >= {SCALING_MIN_CORES} cores"),
        };
    }
    verdict(speedup >= SCALING_SPEEDUP && elapsed <= Duration::from_secs(600), detail)
}

fn pipeline_overlap() -> Outcome {
    let cost = Duration::from_millis(20);
    let stage = |_, x: usize| {
        std::thread::sleep(cost);
        Ok::<_, String>(x)
    };
    let t = Instant::now();
    for i in 0..16 {
        let _ = stage(i, i).and_then(|x| stage(i, x)).and_then(|x| stage(i, x));
    }
    let serial = t.elapsed();
    let t = Instant::now();
    let out = run_pipeline((0..16).collect(), stage, stage, stage, 2).unwrap();
    let piped = t.elapsed();
    let ratio = piped.as_secs_f64() / serial.as_secs_f64();
    verdict(
        out.len() == 16 && ratio <= PIPELINE_RATIO,
        format!(
            "16 tasks x 3 stages of {}ms: serialized {:.0}ms, pipelined {:.0}ms, ratio {ratio:.3} (<= {PIPELINE_RATIO})",
            cost.as_millis(),
            serial.as_secs_f64() * 1e3,
            piped.as_secs_f64() * 1e3
        ),
    )
}

/// Splits a record stream into per-level runs.
fn by_level(records: &[IterationRecord]) -> Vec<Vec<IterationRecord>> {
    let mut runs: Vec<Vec<IterationRecord>> = Vec::new();
    for r in records {
        match runs.last_mut() {
            Some(run) if r.iter > 0 && run.last().is_some_and(|p| p.level == r.level) => run.push(r.clone()),
            _ => runs.push(vec![r.clone()]),
        }
    }
    runs
}

fn solver_descent(runs: &[Vec<IterationRecord>]) -> Outcome {
    let mut descends = true;
    let mut flags_match = true;
    let (mut steps, mut restarts) = (0usize, 0usize);
    for run in runs {
        descends &= descends_within_segments(run, DESCENT_RTOL);
        for w in run.windows(2) {
            flags_match &= w[1].restarted == (w[1].objective > w[0].objective);
            restarts += w[1].restarted as usize;
            steps += 1;
        }
    }
    verdict(
        descends && flags_match && !runs.is_empty(),
        format!(
            "{} runs, {steps} iterations, {restarts} restarts: non-increasing within segments (rtol {DESCENT_RTOL:.0e}): {descends}; \
             restart flag set exactly when the objective rose: {flags_match}",
            runs.len()
        ),
    )
}

fn guarded(id: usize, name: &str, f: impl FnOnce() -> Outcome) -> Status {
    let o = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| Outcome {
        status: Status::Fail,
        detail: format!(
            "panicked: {}",
            p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default()
        ),
    });
    line(id, name, &o);
    o.status
}

#[test]
fn acceptance_criteria() {
    let mut statuses = Vec::new();
    let mut descent: Vec<Vec<IterationRecord>> = Vec::new();

    statuses.push((1, guarded(1, "adjointness", adjointness)));
    statuses.push((2, guarded(2, "NUFFT accuracy", nufft_accuracy)));
    statuses.push((3, guarded(3, "Toeplitz equivalence and speed", toeplitz_equivalence)));
    statuses.push((4, guarded(4, "dense normal-operator oracle", dense_oracle)));
    statuses.push((5, guarded(5, "analytic disk projection", disk_chords)));
    statuses.push((6, guarded(6, "FBP fidelity", fbp_fidelity)));

    statuses.push((
        7,
        guarded(7, "initialization effect", || {
            let t = Instant::now();
            let r = bench::init_bench(&InitBench::default()).unwrap();
            descent.push(r.zero.clone());
            descent.push(r.fbp.clone());
            init_effect(&r, t.elapsed())
        }),
    ));
    statuses.push((
        8,
        guarded(8, "multi-resolution effect", || {
            let t = Instant::now();
            let r = bench::multires_bench(&MultiresBench::default()).unwrap();
            let all: Vec<IterationRecord> = r.records().cloned().collect();
            descent.extend(by_level(&all));
            multires_effect(&r, t.elapsed())
        }),
    ));
    statuses.push((9, guarded(9, "prior correctness", prior_correctness)));
    statuses.push((10, guarded(10, "distributed exactness", || distributed_exactness(&mut descent))));
    statuses.push((
        11,
        guarded(11, "scaling shape", || {
            let t = Instant::now();
            let r = bench::scaling_bench(&ScalingBench::default()).unwrap();
            descent.extend(r.records.iter().cloned());
            scaling_shape(&r, t.elapsed())
        }),
    ));
    statuses.push((12, guarded(12, "pipeline overlap", pipeline_overlap)));
    statuses.push((13, guarded(13, "solver descent on all benchmark runs", || solver_descent(&descent))));

    let failed: Vec<usize> = statuses.iter().filter(|(_, s)| *s == Status::Fail).map(|(id, _)| *id).collect();
    let skipped: Vec<usize> = statuses.iter().filter(|(_, s)| *s == Status::NotEvaluable).map(|(id, _)| *id).collect();
    let _ = writeln!(
        std::io::stderr().lock(),
        "acceptance summary: {} pass, {} fail {failed:?}, {} not evaluable {skipped:?}",
        statuses.len() - failed.len() - skipped.len(),
        failed.len(),
        skipped.len()
    );
    assert!(failed.is_empty(), "criteria failed: {failed:?}");
}
