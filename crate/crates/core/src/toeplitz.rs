//! The normal operator `R* R` as a convolution.
//!
//! `R* R f(x) = sum_n f_n K(x - x_n)` with `K(d) = Re sum_m a_m exp(i k_m . d)`,
//! so one application is a zero-padded FFT convolution with a kernel that only
//! depends on the scan geometry. `K` is needed at the integer offsets
//! `d in [-(N-1), N-1]^2`, which is exactly a type-1 NUFFT onto an odd grid of
//! side `2N - 1`.

use std::sync::Arc;

use num_complex::Complex64;
use realfft::{ComplexToReal, RealFftPlanner, RealToComplex};
use rustfft::{Fft, FftPlanner};

use crate::error::{check_len, Result, TomoError};
use crate::fft::next_smooth;
use crate::geometry::{ImageGrid, Sinogram, Volume};
use crate::nufft::NufftPlan;
use crate::radon::RadonOperator;

/// Fourier-domain convolution kernel for one geometry and grid size.
pub struct PsfKernel {
    source_side: usize,
    padded_side: usize,
    // unnormalized 2D FFT of K, stored column-major: [col * M + row], M/2+1 columns
    spectrum: Vec<Complex64>,
    spatial: Vec<f64>,
    r2c: Arc<dyn RealToComplex<f64>>,
    c2r: Arc<dyn ComplexToReal<f64>>,
    col_forward: Arc<dyn Fft<f64>>,
    col_inverse: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for PsfKernel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PsfKernel")
            .field("source_side", &self.source_side)
            .field("padded_side", &self.padded_side)
            .finish()
    }
}

/// Evaluates `K` on the odd grid of `plan` from per-sample weights.
///
/// `plan` must use the reconstruction's polar sampling on a grid of side at
/// least `2 * source_side - 1`; its centre pixel is offset zero.
pub fn compute_psf(plan: &NufftPlan, weights: &[Complex64], source_side: usize) -> Result<PsfKernel> {
    let side = plan.grid_side();
    if source_side == 0 {
        return Err(TomoError::InvalidGeometry("source side must be positive".into()));
    }
    if side < 2 * source_side - 1 || side % 2 == 0 {
        return Err(TomoError::InvalidGeometry(format!(
            "PSF grid side {side} must be odd and at least {}",
            2 * source_side - 1
        )));
    }
    let full = plan.type1(weights)?;
    let k_side = 2 * source_side - 1;
    let margin = (side - k_side) / 2;
    let mut spatial = Vec::with_capacity(k_side * k_side);
    for iy in 0..k_side {
        let row = (iy + margin) * side + margin;
        spatial.extend(full[row..row + k_side].iter().map(|c| c.re));
    }
    Ok(PsfKernel::from_spatial(source_side, spatial))
}

impl PsfKernel {
    /// Builds the kernel for `op`'s geometry at `op`'s NUFFT tolerance.
    pub fn for_operator(op: &RadonOperator) -> Result<Self> {
        let n = op.image_side();
        let plan = NufftPlan::new(2 * n - 1, op.sampling().clone(), op.nufft().tolerance())?;
        compute_psf(&plan, &op.psf_sample_weights(), n)
    }

    fn from_spatial(source_side: usize, spatial: Vec<f64>) -> Self {
        let n = source_side;
        let k_side = 2 * n - 1;
        let m = next_smooth(k_side);
        let mut real_planner = RealFftPlanner::new();
        let mut planner = FftPlanner::new();
        let mut psf = Self {
            source_side: n,
            padded_side: m,
            spectrum: Vec::new(),
            spatial,
            r2c: real_planner.plan_fft_forward(m),
            c2r: real_planner.plan_fft_inverse(m),
            col_forward: planner.plan_fft_forward(m),
            col_inverse: planner.plan_fft_inverse(m),
        };
        // circular embedding with offset zero at (0, 0)
        let mut grid = vec![0.0; m * m];
        let c = n as i64 - 1;
        for iy in 0..k_side {
            let gy = (iy as i64 - c).rem_euclid(m as i64) as usize;
            for ix in 0..k_side {
                let gx = (ix as i64 - c).rem_euclid(m as i64) as usize;
                grid[gy * m + gx] = psf.spatial[iy * k_side + ix];
            }
        }
        let mut cols = psf.rows_to_columns(&grid, m);
        let mut scratch = vec![Complex64::default(); psf.col_forward.get_inplace_scratch_len()];
        for col in cols.chunks_exact_mut(m) {
            psf.col_forward.process_with_scratch(col, &mut scratch);
        }
        psf.spectrum = cols;
        psf
    }

    pub fn source_side(&self) -> usize {
        self.source_side
    }

    pub fn padded_side(&self) -> usize {
        self.padded_side
    }

    /// Half spectrum, `(M/2 + 1) x M` column-major.
    pub fn spectrum(&self) -> &[Complex64] {
        &self.spectrum
    }

    /// `K` at offsets `[-(N-1), N-1]^2`, row-major, centre at `(N-1, N-1)`.
    pub fn spatial(&self) -> &[f64] {
        &self.spatial
    }

    /// `K` at integer offset `(dx, dy)`.
    pub fn at(&self, dx: i64, dy: i64) -> f64 {
        let c = self.source_side as i64 - 1;
        let k_side = 2 * self.source_side - 1;
        self.spatial[((dy + c) as usize) * k_side + (dx + c) as usize]
    }

    /// Real FFT of the first `rows` rows of an `M`-wide row-major array,
    /// scattered into column-major layout (rows beyond `rows` are zero).
    fn rows_to_columns(&self, data: &[f64], rows: usize) -> Vec<Complex64> {
        let m = self.padded_side;
        let width = data.len() / rows;
        let h = m / 2 + 1;
        let mut cols = vec![Complex64::default(); h * m];
        let mut input = self.r2c.make_input_vec();
        let mut output = self.r2c.make_output_vec();
        let mut scratch = self.r2c.make_scratch_vec();
        for r in 0..rows {
            input[..width].copy_from_slice(&data[r * width..(r + 1) * width]);
            input[width..].iter_mut().for_each(|v| *v = 0.0);
            self.r2c
                .process_with_scratch(&mut input, &mut output, &mut scratch)
                .expect("buffer sizes come from the planner");
            for (c, v) in output.iter().enumerate() {
                cols[c * m + r] = *v;
            }
        }
        cols
    }

    /// `R* R f` for one `N x N` slice, written to `out`.
    pub fn apply_into(&self, f: &[f64], out: &mut [f64]) -> Result<()> {
        let n = self.source_side;
        check_len("image pixels", n * n, f.len())?;
        check_len("output pixels", n * n, out.len())?;
        let m = self.padded_side;
        let h = m / 2 + 1;
        let mut cols = self.rows_to_columns(f, n);
        let mut scratch = vec![
            Complex64::default();
            self.col_forward
                .get_inplace_scratch_len()
                .max(self.col_inverse.get_inplace_scratch_len())
        ];
        for (col, kernel) in cols.chunks_exact_mut(m).zip(self.spectrum.chunks_exact(m)) {
            self.col_forward.process_with_scratch(col, &mut scratch);
            for (v, k) in col.iter_mut().zip(kernel) {
                *v *= k;
            }
            self.col_inverse.process_with_scratch(col, &mut scratch);
        }
        let mut row = self.c2r.make_input_vec();
        let mut real = self.c2r.make_output_vec();
        let mut rscratch = self.c2r.make_scratch_vec();
        let norm = 1.0 / (m * m) as f64;
        for iy in 0..n {
            for c in 0..h {
                row[c] = cols[c * m + iy];
            }
            // rounding leaves tiny imaginary parts where the spectrum is real
            row[0].im = 0.0;
            if m % 2 == 0 {
                row[h - 1].im = 0.0;
            }
            self.c2r
                .process_with_scratch(&mut row, &mut real, &mut rscratch)
                .expect("buffer sizes come from the planner");
            for (o, v) in out[iy * n..(iy + 1) * n].iter_mut().zip(&real[..n]) {
                *o = v * norm;
            }
        }
        Ok(())
    }

    pub fn apply_slice(&self, f: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; f.len()];
        self.apply_into(f, &mut out)?;
        Ok(out)
    }
}

/// `R* R f` by padded FFT convolution.
pub fn toeplitz_apply(psf: &PsfKernel, f: &ImageGrid) -> Result<ImageGrid> {
    check_len("image side", psf.source_side(), f.side())?;
    ImageGrid::new(f.side(), psf.apply_slice(f.data())?)
}

/// Precomputed data terms of `1/2 ||R f - g||^2` for a stack of slices.
#[derive(Clone, Debug)]
pub struct FidelityContext {
    psf: Arc<PsfKernel>,
    rstar_g: Volume,
    g_norm_sq: Vec<f64>,
}

impl FidelityContext {
    pub fn new(op: &RadonOperator, psf: Arc<PsfKernel>, sino: &Sinogram) -> Result<Self> {
        check_len("PSF side", op.image_side(), psf.source_side())?;
        let rstar_g = op.back_volume(sino)?;
        let g_norm_sq = (0..sino.slices())
            .map(|z| sino.slice(z).iter().map(|v| v * v).sum())
            .collect();
        Self::from_parts(psf, rstar_g, g_norm_sq)
    }

    pub fn from_parts(psf: Arc<PsfKernel>, rstar_g: Volume, g_norm_sq: Vec<f64>) -> Result<Self> {
        check_len("R*g side", psf.source_side(), rstar_g.side())?;
        check_len("per-slice g norms", rstar_g.slices(), g_norm_sq.len())?;
        Ok(Self { psf, rstar_g, g_norm_sq })
    }

    /// Context restricted to slices `[begin, end)`.
    pub fn sub_range(&self, begin: usize, end: usize) -> Self {
        Self {
            psf: self.psf.clone(),
            rstar_g: self.rstar_g.sub_volume(begin, end),
            g_norm_sq: self.g_norm_sq[begin..end].to_vec(),
        }
    }

    pub fn psf(&self) -> &Arc<PsfKernel> {
        &self.psf
    }

    pub fn rstar_g(&self) -> &Volume {
        &self.rstar_g
    }

    pub fn g_norm_sq(&self) -> &[f64] {
        &self.g_norm_sq
    }

    pub fn side(&self) -> usize {
        self.psf.source_side()
    }

    pub fn slices(&self) -> usize {
        self.rstar_g.slices()
    }

    /// Fidelity of slice `z` given `f` and `K f` for that slice.
    pub fn slice_loss(&self, z: usize, f: &[f64], kf: &[f64]) -> f64 {
        let r = self.rstar_g.slice(z);
        let mut quad = 0.0;
        let mut lin = 0.0;
        for ((&a, &b), &c) in f.iter().zip(kf).zip(r) {
            quad += a * b;
            lin += a * c;
        }
        0.5 * quad - lin + 0.5 * self.g_norm_sq[z]
    }

    /// `K f - R* g` for slice `z` into `out`.
    pub fn slice_grad(&self, z: usize, kf: &[f64], out: &mut [f64]) {
        for ((o, &k), &r) in out.iter_mut().zip(kf).zip(self.rstar_g.slice(z)) {
            *o = k - r;
        }
    }

    fn check(&self, f: &Volume) -> Result<()> {
        check_len("volume side", self.side(), f.side())?;
        check_len("volume slices", self.slices(), f.slices())
    }
}

/// `1/2 <f, K f> - <f, R* g> + 1/2 g^T g`, summed over slices.
pub fn fidelity_loss(ctx: &FidelityContext, f: &Volume) -> Result<f64> {
    ctx.check(f)?;
    let mut total = 0.0;
    for z in 0..f.slices() {
        let kf = ctx.psf.apply_slice(f.slice(z))?;
        total += ctx.slice_loss(z, f.slice(z), &kf);
    }
    Ok(total)
}

/// `K f - R* g`.
pub fn fidelity_grad(ctx: &FidelityContext, f: &Volume) -> Result<Volume> {
    ctx.check(f)?;
    let mut out = Volume::zeros(f.slices(), f.side());
    for z in 0..f.slices() {
        let kf = ctx.psf.apply_slice(f.slice(z))?;
        ctx.slice_grad(z, &kf, out.slice_mut(z));
    }
    Ok(out)
}

/// Reference path: `(1/2 ||R f - g||^2, R*(R f - g))` for one slice.
pub fn direct_fidelity(op: &RadonOperator, f: &[f64], g: &[f64]) -> Result<(f64, Vec<f64>)> {
    check_len("sinogram slice", op.sino_len(), g.len())?;
    let mut residual = op.forward_slice(f)?;
    for (r, &v) in residual.iter_mut().zip(g) {
        *r -= v;
    }
    let loss = 0.5 * residual.iter().map(|v| v * v).sum::<f64>();
    Ok((loss, op.back_slice(&residual)?))
}
