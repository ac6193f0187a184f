//! Coarse-to-fine reconstruction.
//!
//! Each level reconstructs on a grid whose pixels are `2^k` times larger than
//! the target's, from a sinogram strided to the same sampling. The estimate is
//! carried to the next level by separable Lanczos-3 interpolation.
//!
//! All levels share a physical frame: the rotation centre sits at the centre
//! of every grid, so coarse pixel `k` lies at fine position
//! `f * (k - (n' - 1) / 2) + (n - 1) / 2`.

use std::f64::consts::PI;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Result, TomoError};
use crate::geometry::{ImageGrid, Sinogram, Volume};
use crate::qggmrf::QggmrfParams;
use crate::radon::RadonOperator;
use crate::solver::{solve_with_sink, IterationRecord, SolveOutput, SolverConfig};
use crate::toeplitz::{FidelityContext, PsfKernel};

pub const LANCZOS_A: usize = 3;
/// Iterations of the coarsest level; each finer level gets half.
pub const DEFAULT_COARSE_ITERS: usize = 200;

/// `a sin(pi x) sin(pi x / a) / (pi x)^2` on `|x| < a`.
pub fn lanczos_kernel(x: f64, a: usize) -> f64 {
    let a = a as f64;
    if x == 0.0 {
        return 1.0;
    }
    // sin(pi k) is not exactly zero in floating point
    if x.abs() >= a || x.fract() == 0.0 {
        return 0.0;
    }
    let px = PI * x;
    a * px.sin() * (px / a).sin() / (px * px)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridHierarchy {
    levels: Vec<usize>,
    iters_per_level: Vec<usize>,
}

impl GridHierarchy {
    /// `refinements + 1` levels ending at `target`, each half the next.
    pub fn new(target: usize, refinements: usize) -> Result<Self> {
        let levels: Vec<usize> = (0..=refinements)
            .map(|l| target.div_ceil(1 << (refinements - l)))
            .collect();
        let iters = (0..=refinements).map(|l| (DEFAULT_COARSE_ITERS >> l).max(1)).collect();
        Self::with_iters(levels, iters)
    }

    /// Coarsest level near 64 px: `ceil(log2(target / 64))` refinements.
    pub fn default_for(target: usize) -> Result<Self> {
        let refinements = if target <= 64 {
            0
        } else {
            (target as f64 / 64.0).log2().ceil() as usize
        };
        Self::new(target, refinements)
    }

    pub fn with_iters(levels: Vec<usize>, iters_per_level: Vec<usize>) -> Result<Self> {
        if levels.is_empty() {
            return Err(TomoError::InvalidParameter("hierarchy needs at least one level".into()));
        }
        if levels.len() != iters_per_level.len() {
            return Err(TomoError::InvalidParameter(format!(
                "{} levels but {} iteration counts",
                levels.len(),
                iters_per_level.len()
            )));
        }
        if levels[0] < 4 {
            return Err(TomoError::InvalidParameter(format!("coarsest level {} is below 4 px", levels[0])));
        }
        for w in levels.windows(2) {
            if w[1] <= w[0] || w[1].div_ceil(2) != w[0] {
                return Err(TomoError::InvalidParameter(format!(
                    "level {} does not double into {}",
                    w[0], w[1]
                )));
            }
        }
        if iters_per_level.contains(&0) {
            return Err(TomoError::InvalidParameter("every level needs at least one iteration".into()));
        }
        Ok(Self { levels, iters_per_level })
    }

    pub fn levels(&self) -> &[usize] {
        &self.levels
    }

    pub fn iters_per_level(&self) -> &[usize] {
        &self.iters_per_level
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn target(&self) -> usize {
        *self.levels.last().unwrap()
    }

    pub fn window_a(&self) -> usize {
        LANCZOS_A
    }

    /// Pixel-size ratio between level `l` and the target.
    pub fn factor(&self, l: usize) -> usize {
        1 << (self.levels.len() - 1 - l)
    }
}

/// Which sinogram axes besides the detector are strided.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DownsampleAxes {
    pub slices: bool,
    pub angles: bool,
}

/// First strided index: the sample nearest the centre of the first block.
pub fn stride_start(factor: usize) -> usize {
    (factor - 1) / 2
}

/// Keeps every `factor`-th detector bin. Line integrals shrink with the
/// pixel size, so values are divided by `factor`; the detector offset is
/// re-expressed in coarse bins so bin positions keep their physical place.
pub fn downsample_sinogram(sino: &Sinogram, factor: usize, axes: DownsampleAxes) -> Result<Sinogram> {
    if factor == 0 || !factor.is_power_of_two() {
        return Err(TomoError::InvalidParameter(format!("factor {factor} is not a power of two")));
    }
    let bins = sino.detector_bins();
    if factor > bins {
        return Err(TomoError::InvalidParameter(format!("factor {factor} exceeds {bins} detector bins")));
    }
    if factor == 1 {
        return Ok(sino.clone());
    }
    let start = stride_start(factor);
    let bin_idx: Vec<usize> = (start..bins).step_by(factor).collect();
    let angle_idx: Vec<usize> = if axes.angles {
        (stride_start(factor)..sino.n_angles()).step_by(factor).collect()
    } else {
        (0..sino.n_angles()).collect()
    };
    let slice_idx: Vec<usize> = if axes.slices && sino.slices() >= factor {
        (start..sino.slices()).step_by(factor).collect()
    } else {
        (0..sino.slices()).collect()
    };
    let scale = 1.0 / factor as f64;
    let mut data = Vec::with_capacity(slice_idx.len() * angle_idx.len() * bin_idx.len());
    for &z in &slice_idx {
        for &a in &angle_idx {
            let row = sino.row(z, a);
            data.extend(bin_idx.iter().map(|&j| row[j] * scale));
        }
    }
    let angles = angle_idx.iter().map(|&a| sino.angles()[a]).collect();
    let coarse_bins = bin_idx.len();
    let f = factor as f64;
    let offset = (start as f64 - (bins as f64 - 1.0) / 2.0 + sino.detector_offset()) / f
        + (coarse_bins as f64 - 1.0) / 2.0;
    Ok(Sinogram::new(angles, coarse_bins, slice_idx.len(), data)?.with_detector_offset(offset))
}

/// Interpolation weights along one axis: `(first source index, weights)` per
/// output sample, normalized to sum to one.
fn axis_weights(src_len: usize, positions: impl Iterator<Item = f64>) -> Vec<(usize, Vec<f64>)> {
    let a = LANCZOS_A as i64;
    positions
        .map(|x| {
            let base = x.floor() as i64;
            let lo = (base - a + 1).max(0);
            let hi = (base + a).min(src_len as i64 - 1);
            let mut w: Vec<f64> = (lo..=hi).map(|i| lanczos_kernel(x - i as f64, LANCZOS_A)).collect();
            let sum: f64 = w.iter().sum();
            if sum.abs() > 1e-12 {
                w.iter_mut().for_each(|v| *v /= sum);
            }
            (lo as usize, w)
        })
        .collect()
}

/// Source coordinate of each of `dst_len` samples when the source grid has
/// `scale` times the spacing of the destination and both are centred.
fn centred_positions(src_len: usize, dst_len: usize, scale: f64) -> impl Iterator<Item = f64> {
    let sc = (src_len as f64 - 1.0) / 2.0;
    let dc = (dst_len as f64 - 1.0) / 2.0;
    (0..dst_len).map(move |i| (i as f64 - dc) / scale + sc)
}

/// Resamples axis `axis` (0 = x, 1 = y, 2 = z) of a `(nz, ny, nx)` array.
fn resample_axis(data: &[f64], dims: [usize; 3], axis: usize, weights: &[(usize, Vec<f64>)]) -> (Vec<f64>, [usize; 3]) {
    let [_, ny, nx] = dims;
    let stride = [1, nx, nx * ny][axis];
    let mut out_dims = dims;
    out_dims[2 - axis] = weights.len();
    let [oz, oy, ox] = out_dims;
    let mut out = Vec::with_capacity(oz * oy * ox);
    for z in 0..oz {
        for y in 0..oy {
            for x in 0..ox {
                let pos = [x, y, z];
                let mut base = [x, y, z];
                base[axis] = 0;
                let origin = (base[2] * ny + base[1]) * nx + base[0];
                let (first, w) = &weights[pos[axis]];
                let v = w
                    .iter()
                    .enumerate()
                    .map(|(j, wj)| wj * data[origin + (first + j) * stride])
                    .sum();
                out.push(v);
            }
        }
    }
    (out, out_dims)
}

/// Lanczos-3 upsampling to `target_side`, grid centre to grid centre.
pub fn upsample(img: &ImageGrid, target_side: usize) -> Result<ImageGrid> {
    let n = img.side();
    if target_side < n {
        return Err(TomoError::InvalidParameter(format!(
            "upsample to {target_side} from {n}: use the downsampling path"
        )));
    }
    let scale = target_side as f64 / n as f64;
    let vol = upsample_scaled(&Volume::from(img.clone()), target_side, scale, None)?;
    Ok(vol.slice_image(0))
}

/// Volume upsampling; slices are interpolated with the same centred rule.
pub fn upsample_volume(vol: &Volume, target_side: usize, target_slices: usize) -> Result<Volume> {
    if target_side < vol.side() || target_slices < vol.slices() {
        return Err(TomoError::InvalidParameter(format!(
            "upsample to {target_slices}x{target_side} from {}x{}: use the downsampling path",
            vol.slices(),
            vol.side()
        )));
    }
    let zs: Vec<f64> = centred_positions(vol.slices(), target_slices, target_slices as f64 / vol.slices() as f64).collect();
    upsample_scaled(vol, target_side, target_side as f64 / vol.side() as f64, Some(&zs))
}

/// `z`: source slice coordinate of every output slice; `None` keeps slices.
fn upsample_scaled(vol: &Volume, side: usize, scale: f64, z: Option<&[f64]>) -> Result<Volume> {
    let n = vol.side();
    let w = axis_weights(n, centred_positions(n, side, scale));
    let dims = [vol.slices(), n, n];
    let (data, dims) = resample_axis(vol.data(), dims, 0, &w);
    let (mut data, mut dims) = resample_axis(&data, dims, 1, &w);
    if let Some(z) = z {
        let wz = axis_weights(vol.slices(), z.iter().copied());
        (data, dims) = resample_axis(&data, dims, 2, &wz);
    }
    Volume::new(dims[0], dims[1], data)
}

/// Solves one level; lets callers substitute a distributed solve.
pub trait LevelSolver {
    fn solve_level(
        &mut self,
        level: usize,
        op: &RadonOperator,
        sino: &Sinogram,
        params: &QggmrfParams,
        cfg: &SolverConfig,
        f0: &Volume,
    ) -> Result<SolveOutput>;
}

/// In-thread solve on the Toeplitz path.
#[derive(Default)]
pub struct SerialLevelSolver<'a> {
    pub sink: Option<&'a mut dyn FnMut(&IterationRecord)>,
}

impl LevelSolver for SerialLevelSolver<'_> {
    fn solve_level(
        &mut self,
        level: usize,
        op: &RadonOperator,
        sino: &Sinogram,
        params: &QggmrfParams,
        cfg: &SolverConfig,
        f0: &Volume,
    ) -> Result<SolveOutput> {
        let psf = Arc::new(PsfKernel::for_operator(op)?);
        let ctx = FidelityContext::new(op, psf, sino)?;
        let mut tag = |r: &IterationRecord| {
            if let Some(s) = self.sink.as_mut() {
                let mut r = r.clone();
                r.level = level;
                s(&r);
            }
        };
        solve_with_sink(&ctx, params, cfg, f0, Some(&mut tag))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HierarchyOptions {
    pub fbp_init: bool,
    pub downsample_angles: bool,
    /// NUFFT tolerance of every level's operator.
    pub tolerance: f64,
}

impl Default for HierarchyOptions {
    fn default() -> Self {
        Self {
            fbp_init: false,
            downsample_angles: false,
            tolerance: crate::radon::DEFAULT_TOLERANCE,
        }
    }
}

#[derive(Clone, Debug)]
pub struct HierarchicalOutput {
    pub volume: Volume,
    /// Records of all levels, tagged with their level index.
    pub records: Vec<IterationRecord>,
    /// Estimate at the end of each level.
    pub level_volumes: Vec<Volume>,
}

/// Runs the levels coarse to fine; `cfg.max_iters` is replaced per level by
/// the hierarchy's budget and a fixed `cfg.lipschitz` applies to the finest
/// level only.
pub fn solve_hierarchical(
    sino: &Sinogram,
    hierarchy: &GridHierarchy,
    params: &QggmrfParams,
    cfg: &SolverConfig,
    opts: &HierarchyOptions,
    solver: &mut dyn LevelSolver,
) -> Result<HierarchicalOutput> {
    let target = hierarchy.target();
    // validates detector width against the target side
    sino.geometry(target)?;
    // slices are strided only when every level can be
    let stride_slices = sino.slices() > 1 && sino.slices() >= hierarchy.factor(0);
    let axes = DownsampleAxes {
        slices: stride_slices,
        angles: opts.downsample_angles,
    };
    let mut records = Vec::new();
    let mut level_volumes: Vec<Volume> = Vec::new();
    let mut prev: Option<(Volume, usize)> = None;
    for (l, &side) in hierarchy.levels().iter().enumerate() {
        let factor = hierarchy.factor(l);
        let level_sino = downsample_sinogram(sino, factor, axes)?;
        let op = RadonOperator::with_tolerance(&level_sino.geometry(side)?, opts.tolerance)?;
        let slices = level_sino.slices();
        let f0 = match &prev {
            None if opts.fbp_init => op.fbp_volume(&level_sino)?,
            None => Volume::zeros(slices, side),
            Some((coarse, coarse_factor)) => {
                let ratio = (coarse_factor / factor) as f64;
                let zs: Option<Vec<f64>> = stride_slices.then(|| {
                    // both stacks index the full-resolution slices
                    let origin = (stride_start(*coarse_factor) as f64 - stride_start(factor) as f64) / factor as f64;
                    (0..slices).map(|i| (i as f64 - origin) / ratio).collect()
                });
                upsample_scaled(coarse, side, ratio, zs.as_deref())?
            }
        };
        let level_cfg = SolverConfig {
            max_iters: hierarchy.iters_per_level()[l],
            lipschitz: if l + 1 == hierarchy.len() { cfg.lipschitz } else { None },
            ..cfg.clone()
        };
        log::info!("level {l}: {side} px, {slices} slices, {} iterations", level_cfg.max_iters);
        let out = solver.solve_level(l, &op, &level_sino, params, &level_cfg, &f0)?;
        records.extend(out.records.into_iter().map(|mut r| {
            r.level = l;
            r
        }));
        level_volumes.push(out.volume.clone());
        prev = Some((out.volume, factor));
    }
    let volume = prev.map(|p| p.0).expect("hierarchy has levels");
    Ok(HierarchicalOutput {
        volume,
        records,
        level_volumes,
    })
}
