//! Radon transform and its adjoint through the central slice theorem.
//!
//! A projection at angle `theta` is recovered from the type-2 samples on the
//! matching radial line by a length-`N_d` inverse FFT. With an even bin count
//! the Nyquist sample `omega = -pi` has no mirror partner inside the sampled
//! set, so it is given zero weight: the projector then maps real images to
//! real sinograms exactly, and `R* R` is an exact Toeplitz operator.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{check_len, Result, TomoError};
use crate::geometry::{polar_sampling, radial_indices, ImageGrid, PolarSampling, ScanGeometry, Sinogram, Volume};
use crate::nufft::NufftPlan;

/// NUFFT accuracy used by the reconstruction operators unless overridden.
pub const DEFAULT_TOLERANCE: f64 = 1e-9;

const IMAG_RESIDUE_LIMIT: f64 = 1e-6;

/// Weight of each radial sample, ascending frequency order (0 at the unpaired
/// Nyquist sample, 1 elsewhere).
pub fn radial_weights(bins: usize) -> Vec<f64> {
    radial_indices(bins)
        .map(|j| if bins % 2 == 0 && j == -((bins / 2) as i64) { 0.0 } else { 1.0 })
        .collect()
}

/// Forward projector `R` and backprojector `R*` for one scan geometry.
pub struct RadonOperator {
    geom: ScanGeometry,
    nufft: NufftPlan,
    fft_forward: Arc<dyn Fft<f64>>,
    fft_inverse: Arc<dyn Fft<f64>>,
    // radial sample k (ascending) lives at FFT index order[k]
    order: Vec<usize>,
    // weight * exp(i omega_k * s), s = detector centre shift
    phase: Vec<Complex64>,
}

impl std::fmt::Debug for RadonOperator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RadonOperator")
            .field("geometry", &self.geom)
            .field("nufft", &self.nufft)
            .finish()
    }
}

impl RadonOperator {
    pub fn new(geom: &ScanGeometry) -> Result<Self> {
        Self::with_tolerance(geom, DEFAULT_TOLERANCE)
    }

    pub fn with_tolerance(geom: &ScanGeometry, tolerance: f64) -> Result<Self> {
        let sampling = Arc::new(polar_sampling(geom)?);
        let nufft = NufftPlan::new(geom.image_side(), sampling, tolerance)?;
        Ok(Self::from_plan(geom.clone(), nufft))
    }

    /// Wraps an existing plan; `geom` must be the geometry the plan samples.
    pub fn from_plan(geom: ScanGeometry, nufft: NufftPlan) -> Self {
        let bins = geom.detector_bins();
        let mut planner = FftPlanner::new();
        let fft_forward = planner.plan_fft_forward(bins);
        let fft_inverse = planner.plan_fft_inverse(bins);
        let shift = geom.detector_offset() - (bins as f64 - 1.0) / 2.0;
        let weights = radial_weights(bins);
        let (order, phase) = radial_indices(bins)
            .zip(&weights)
            .map(|(j, &w)| {
                let omega = 2.0 * PI * j as f64 / bins as f64;
                (j.rem_euclid(bins as i64) as usize, Complex64::from_polar(w, omega * shift))
            })
            .unzip();
        Self {
            geom,
            nufft,
            fft_forward,
            fft_inverse,
            order,
            phase,
        }
    }

    pub fn geometry(&self) -> &ScanGeometry {
        &self.geom
    }

    pub fn nufft(&self) -> &NufftPlan {
        &self.nufft
    }

    pub fn sampling(&self) -> &Arc<PolarSampling> {
        self.nufft.sampling()
    }

    pub fn image_side(&self) -> usize {
        self.geom.image_side()
    }

    pub fn n_angles(&self) -> usize {
        self.geom.angles().len()
    }

    pub fn detector_bins(&self) -> usize {
        self.geom.detector_bins()
    }

    /// Length of one projected slice (`angles * bins`).
    pub fn sino_len(&self) -> usize {
        self.n_angles() * self.detector_bins()
    }

    /// Per-sample weights fed to the PSF computation, `w_m / N_d`.
    pub fn psf_sample_weights(&self) -> Vec<Complex64> {
        let bins = self.detector_bins() as f64;
        let per_angle: Vec<Complex64> = self.phase.iter().map(|p| Complex64::new(p.norm() / bins, 0.0)).collect();
        (0..self.n_angles()).flat_map(|_| per_angle.iter().copied()).collect()
    }

    /// Projects one image slice, returning `angles * bins` values.
    pub fn forward_slice(&self, image: &[f64]) -> Result<Vec<f64>> {
        let n = self.image_side();
        check_len("image pixels", n * n, image.len())?;
        let bins = self.detector_bins();
        let samples = self.nufft.type2_raw(image);
        let mut out = Vec::with_capacity(self.sino_len());
        let mut buf = vec![Complex64::default(); bins];
        let mut scratch = vec![Complex64::default(); self.fft_inverse.get_inplace_scratch_len()];
        let (mut re2, mut im2) = (0.0, 0.0);
        for row in samples.chunks_exact(bins) {
            for ((c, &dst), ph) in row.iter().zip(&self.order).zip(&self.phase) {
                buf[dst] = c * ph;
            }
            self.fft_inverse.process_with_scratch(&mut buf, &mut scratch);
            for v in &buf {
                let v = v / bins as f64;
                re2 += v.re * v.re;
                im2 += v.im * v.im;
                out.push(v.re);
            }
        }
        check_residue("forward projection", re2, im2);
        Ok(out)
    }

    /// Adjoint of [`Self::forward_slice`].
    pub fn back_slice(&self, sino: &[f64]) -> Result<Vec<f64>> {
        check_len("sinogram slice", self.sino_len(), sino.len())?;
        let bins = self.detector_bins();
        let mut samples = Vec::with_capacity(self.sampling().len());
        let mut buf = vec![Complex64::default(); bins];
        let mut scratch = vec![Complex64::default(); self.fft_forward.get_inplace_scratch_len()];
        for row in sino.chunks_exact(bins) {
            for (b, &v) in buf.iter_mut().zip(row) {
                *b = Complex64::new(v, 0.0);
            }
            self.fft_forward.process_with_scratch(&mut buf, &mut scratch);
            for (&src, ph) in self.order.iter().zip(&self.phase) {
                samples.push(buf[src] * ph.conj() / bins as f64);
            }
        }
        let image = self.nufft.type1_raw(&samples);
        let (mut re2, mut im2) = (0.0, 0.0);
        let out = image
            .iter()
            .map(|v| {
                re2 += v.re * v.re;
                im2 += v.im * v.im;
                v.re
            })
            .collect();
        check_residue("backprojection", re2, im2);
        Ok(out)
    }

    pub fn forward_project(&self, image: &ImageGrid) -> Result<Sinogram> {
        check_len("image side", self.image_side(), image.side())?;
        let data = self.forward_slice(image.data())?;
        self.sinogram(1, data)
    }

    pub fn back_project(&self, sino: &Sinogram) -> Result<ImageGrid> {
        self.check_sinogram(sino)?;
        check_len("sinogram slices", 1, sino.slices())?;
        let data = self.back_slice(sino.data())?;
        ImageGrid::new(self.image_side(), data)
    }

    /// Slice-by-slice projection of a volume.
    pub fn forward_volume(&self, vol: &Volume) -> Result<Sinogram> {
        check_len("volume side", self.image_side(), vol.side())?;
        let mut data = Vec::with_capacity(vol.slices() * self.sino_len());
        for z in 0..vol.slices() {
            data.extend(self.forward_slice(vol.slice(z))?);
        }
        self.sinogram(vol.slices(), data)
    }

    pub fn back_volume(&self, sino: &Sinogram) -> Result<Volume> {
        self.check_sinogram(sino)?;
        let n = self.image_side();
        let mut data = Vec::with_capacity(sino.slices() * n * n);
        for z in 0..sino.slices() {
            data.extend(self.back_slice(sino.slice(z))?);
        }
        Volume::new(sino.slices(), n, data)
    }

    /// Normalization of the filtered backprojection: the Riemann weight of the
    /// polar integral for `P` angles over `[0, pi)` with unit-spaced bins.
    pub fn fbp_scale(&self) -> f64 {
        1.0 / (2.0 * self.n_angles() as f64)
    }

    pub fn fbp(&self, sino: &Sinogram) -> Result<ImageGrid> {
        check_len("sinogram slices", 1, sino.slices())?;
        let vol = self.fbp_volume(sino)?;
        Ok(vol.slice_image(0))
    }

    pub fn fbp_volume(&self, sino: &Sinogram) -> Result<Volume> {
        self.check_sinogram(sino)?;
        let filtered = ramp_filter_with(sino, &RampFilter::ram_lak(sino.detector_bins()));
        let mut vol = self.back_volume(&filtered)?;
        let scale = self.fbp_scale();
        vol.data_mut().iter_mut().for_each(|v| *v *= scale);
        Ok(vol)
    }

    fn sinogram(&self, slices: usize, data: Vec<f64>) -> Result<Sinogram> {
        Ok(Sinogram::new(self.geom.angles().to_vec(), self.detector_bins(), slices, data)?
            .with_detector_offset(self.geom.detector_offset()))
    }

    fn check_sinogram(&self, sino: &Sinogram) -> Result<()> {
        check_len("sinogram bins", self.detector_bins(), sino.detector_bins())?;
        check_len("sinogram angles", self.n_angles(), sino.n_angles())?;
        if sino.angles() != self.geom.angles() {
            return Err(TomoError::InvalidGeometry("sinogram angles differ from the operator's".into()));
        }
        if (sino.detector_offset() - self.geom.detector_offset()).abs() > 1e-12 {
            return Err(TomoError::InvalidGeometry(format!(
                "sinogram detector offset {} differs from operator offset {}",
                sino.detector_offset(),
                self.geom.detector_offset()
            )));
        }
        Ok(())
    }
}

fn check_residue(what: &str, re2: f64, im2: f64) {
    if im2 > (IMAG_RESIDUE_LIMIT * IMAG_RESIDUE_LIMIT) * re2 && im2 > 1e-300 {
        log::warn!(
            "{what}: imaginary residue {:.3e} of real norm",
            (im2 / re2.max(f64::MIN_POSITIVE)).sqrt()
        );
    }
}

/// Ramp filter `|omega|` applied to detector rows by FFT.
///
/// [`RampFilter::new`] samples `|omega|` on the row's own FFT grid and filters
/// circularly. [`RampFilter::ram_lak`] instead transforms the band-limited ramp
/// kernel `h(0) = pi/2`, `h(n odd) = -2/(pi n^2)` on a zero-padded row of at
/// least twice the length. Away from DC both agree with `|omega|`; at DC the
/// padded kernel keeps the small positive mass the sampled ramp drops, which
/// otherwise shows up as a constant negative bias in filtered backprojection.
#[derive(Clone)]
pub struct RampFilter {
    bins: usize,
    response: Vec<f64>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for RampFilter {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RampFilter")
            .field("bins", &self.bins)
            .field("padded", &self.response.len())
            .finish()
    }
}

impl RampFilter {
    pub fn new(bins: usize) -> Self {
        // FFT index k carries signed frequency k or k - bins; the Nyquist bin
        // of an even row is the negative end of the signed range, |omega| = pi.
        let response = (0..bins)
            .map(|k| {
                let j = if 2 * k < bins { k as f64 } else { k as f64 - bins as f64 };
                (2.0 * PI * j / bins as f64).abs()
            })
            .collect();
        Self::with_response(bins, response)
    }

    pub fn ram_lak(bins: usize) -> Self {
        let len = crate::fft::next_smooth(2 * bins);
        let mut kernel = vec![Complex64::default(); len];
        kernel[0].re = PI / 2.0;
        for n in (1..len / 2 + 1).step_by(2) {
            let h = -2.0 / (PI * (n * n) as f64);
            kernel[n].re = h;
            if len - n != n {
                kernel[len - n].re = h;
            }
        }
        FftPlanner::new().plan_fft_forward(len).process(&mut kernel);
        Self::with_response(bins, kernel.iter().map(|c| c.re).collect())
    }

    fn with_response(bins: usize, response: Vec<f64>) -> Self {
        let mut planner = FftPlanner::new();
        let len = response.len();
        Self {
            bins,
            response,
            forward: planner.plan_fft_forward(len),
            inverse: planner.plan_fft_inverse(len),
        }
    }

    /// Frequency response in FFT index order of the (possibly padded) row.
    pub fn response(&self) -> &[f64] {
        &self.response
    }

    /// Detector row length this filter accepts.
    pub fn len(&self) -> usize {
        self.bins
    }

    pub fn is_empty(&self) -> bool {
        self.bins == 0
    }

    pub fn apply_row(&self, row: &mut [f64]) {
        assert_eq!(row.len(), self.bins, "row length differs from filter length");
        let len = self.response.len();
        let mut buf = vec![Complex64::default(); len];
        for (b, &v) in buf.iter_mut().zip(row.iter()) {
            b.re = v;
        }
        let mut scratch = vec![Complex64::default(); self.forward.get_inplace_scratch_len().max(self.inverse.get_inplace_scratch_len())];
        self.forward.process_with_scratch(&mut buf, &mut scratch);
        for (b, &h) in buf.iter_mut().zip(&self.response) {
            *b *= h;
        }
        self.inverse.process_with_scratch(&mut buf, &mut scratch);
        for (r, b) in row.iter_mut().zip(&buf) {
            *r = b.re / len as f64;
        }
    }
}

/// Circular `|omega|` filtering of every `(slice, angle)` row.
pub fn ramp_filter_apply(sino: &Sinogram) -> Sinogram {
    ramp_filter_with(sino, &RampFilter::new(sino.detector_bins()))
}

pub fn ramp_filter_with(sino: &Sinogram, filter: &RampFilter) -> Sinogram {
    let mut out = sino.clone();
    for row in out.data_mut().chunks_exact_mut(filter.len()) {
        filter.apply_row(row);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom::disk_phantom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn op(angles: usize, bins: usize, side: usize) -> RadonOperator {
        RadonOperator::new(&ScanGeometry::uniform(angles, bins, side).unwrap()).unwrap()
    }

    fn dot(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    #[test]
    fn zero_in_zero_out() {
        let r = op(7, 16, 16);
        let s = r.forward_project(&ImageGrid::zeros(16)).unwrap();
        assert!(s.data().iter().all(|&v| v == 0.0));
        let b = r.back_project(&s).unwrap();
        assert!(b.data().iter().all(|&v| v == 0.0));
        assert!(r.fbp(&s).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn nyquist_weight_only_for_even_rows() {
        assert_eq!(radial_weights(4), vec![0.0, 1.0, 1.0, 1.0]);
        assert_eq!(radial_weights(5), vec![1.0; 5]);
    }

    #[test]
    fn adjoint_dot_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for (n, p) in [(16, 8), (32, 45), (64, 90), (17, 9)] {
            let r = op(p, n, n);
            let f: Vec<f64> = (0..n * n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let g: Vec<f64> = (0..r.sino_len()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let rf = r.forward_slice(&f).unwrap();
            let rg = r.back_slice(&g).unwrap();
            let lhs = dot(&rf, &g);
            let rhs = dot(&f, &rg);
            let scale = dot(&rf, &rf).sqrt() * dot(&g, &g).sqrt();
            assert!((lhs - rhs).abs() <= 1e-6 * scale, "n={n} p={p}: {lhs} vs {rhs}");
        }
    }

    #[test]
    fn projection_mass_equals_image_mass() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let img = ImageGrid::from_fn(24, |_, _| rng.random_range(0.0..1.0));
        let total: f64 = img.data().iter().sum();
        let r = op(10, 30, 24);
        let s = r.forward_project(&img).unwrap();
        for a in 0..10 {
            let m: f64 = s.row(0, a).iter().sum();
            assert!((m - total).abs() <= 1e-3 * total.abs());
        }
    }

    #[test]
    fn central_slice_property() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let n = 20;
        let img = ImageGrid::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        let bins = 21;
        let r = op(6, bins, n);
        let proj = r.forward_project(&img).unwrap();
        let samples = r.nufft().type2(&img).unwrap();
        let geom = r.geometry();
        for a in 0..6 {
            for (k, &omega) in r.sampling().omegas().iter().enumerate() {
                let mut acc = Complex64::default();
                for j in 0..bins {
                    acc += Complex64::from_polar(proj.row(0, a)[j], -omega * geom.bin_position(j));
                }
                let expect = samples[a * bins + k];
                assert!((acc - expect).norm() <= 1e-8 * (1.0 + expect.norm()), "a={a} k={k}");
            }
        }
    }

    #[test]
    fn disk_projection_follows_chord_length() {
        let (n, radius) = (64, 16.0);
        let r = op(30, n, n);
        let s = r.forward_project(&disk_phantom(n, radius, 1.0).unwrap()).unwrap();
        let peak = 2.0 * radius;
        for a in 0..30 {
            for j in 0..n {
                let t = r.geometry().bin_position(j);
                let chord = if t.abs() < radius { 2.0 * (radius * radius - t * t).sqrt() } else { 0.0 };
                assert!((s.row(0, a)[j] - chord).abs() <= 0.15 * peak, "a={a} j={j}");
            }
        }
        // rotational symmetry
        let first = s.row(0, 0).to_vec();
        let norm = dot(&first, &first).sqrt();
        for a in 1..30 {
            let d: f64 = s.row(0, a).iter().zip(&first).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
            assert!(d <= 0.05 * norm, "angle {a}");
        }
    }

    #[test]
    fn backprojection_matches_dense_transpose() {
        let n = 16;
        let r = RadonOperator::new(&ScanGeometry::new(vec![0.3], n, n).unwrap()).unwrap();
        let cols: Vec<Vec<f64>> = (0..n * n)
            .map(|i| {
                let mut e = vec![0.0; n * n];
                e[i] = 1.0;
                r.forward_slice(&e).unwrap()
            })
            .collect();
        let mut g = vec![0.0; n];
        g[9] = 1.0;
        let bp = r.back_slice(&g).unwrap();
        for (i, col) in cols.iter().enumerate() {
            assert!((bp[i] - dot(col, &g)).abs() < 1e-7);
        }
    }

    #[test]
    fn ramp_response_is_abs_frequency() {
        let f = RampFilter::new(8);
        let expect = [0.0, 1.0, 2.0, 3.0, 4.0, 3.0, 2.0, 1.0].map(|j| j * PI / 4.0);
        for (a, b) in f.response().iter().zip(expect) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn ram_lak_tracks_the_ramp_away_from_dc() {
        let f = RampFilter::ram_lak(64);
        let len = f.response().len();
        assert!(len >= 128);
        assert!(f.response()[0] > 0.0 && f.response()[0] < 0.05);
        for k in 1..len / 2 {
            let w = 2.0 * PI * k as f64 / len as f64;
            assert!((f.response()[k] - w).abs() < 0.05 * w.max(0.1), "k={k}");
            assert!((f.response()[k] - f.response()[len - k]).abs() < 1e-12);
        }
    }

    #[test]
    fn ramp_kills_constants_and_scales_cosines() {
        let bins = 64;
        let f = RampFilter::new(bins);
        let mut flat = vec![3.0; bins];
        f.apply_row(&mut flat);
        assert!(flat.iter().all(|v| v.abs() < 1e-12));
        let w = 2.0 * PI * 4.0 / bins as f64;
        let mut row: Vec<f64> = (0..bins).map(|j| (w * j as f64).cos()).collect();
        f.apply_row(&mut row);
        for (j, v) in row.iter().enumerate() {
            assert!((v - w * (w * j as f64).cos()).abs() < 1e-10);
        }
    }

    #[test]
    fn fbp_recovers_disk_interior() {
        let (n, radius) = (128, 32.0);
        let r = op(180, n, n);
        let disk = disk_phantom(n, radius, 1.0).unwrap();
        let rec = r.fbp(&r.forward_project(&disk).unwrap()).unwrap();
        let mut se = 0.0;
        let mut count = 0;
        for iy in 0..n {
            for ix in 0..n {
                let x = crate::geometry::centered(ix, n);
                let y = crate::geometry::centered(iy, n);
                let d = (x * x + y * y).sqrt();
                if (d - radius).abs() > 2.0 {
                    se += (rec.get(ix, iy) - disk.get(ix, iy)).powi(2);
                    count += 1;
                }
            }
        }
        let rmse = (se / count as f64).sqrt();
        assert!(rmse <= 0.05, "rmse {rmse}");
    }

    #[test]
    fn more_angles_give_better_fbp() {
        let n = 64;
        let disk = disk_phantom(n, 20.0, 1.0).unwrap();
        let err = |p: usize| {
            let r = op(p, n, n);
            let rec = r.fbp(&r.forward_project(&disk).unwrap()).unwrap();
            rec.data().iter().zip(disk.data()).map(|(a, b)| (a - b).powi(2)).sum::<f64>()
        };
        assert!(err(360) < err(45));
    }

    #[test]
    fn detector_offset_shifts_projection() {
        let n = 32;
        let disk = disk_phantom(n, 8.0, 1.0).unwrap();
        let base = op(4, n, n);
        let shifted = RadonOperator::new(&ScanGeometry::uniform(4, n, n).unwrap().with_detector_offset(1.0)).unwrap();
        let a = base.forward_project(&disk).unwrap();
        let b = shifted.forward_project(&disk).unwrap();
        // bin j of the shifted detector sits where bin j+1 of the base one does
        for j in 4..n - 4 {
            assert!((b.row(0, 0)[j] - a.row(0, 0)[j + 1]).abs() < 1e-8);
        }
    }

    #[test]
    fn mismatched_inputs_are_rejected() {
        let r = op(4, 16, 16);
        assert!(r.forward_project(&ImageGrid::zeros(15)).is_err());
        let wrong = Sinogram::zeros(crate::geometry::uniform_angles(5), 16, 1).unwrap();
        assert!(r.back_project(&wrong).is_err());
        let offset = Sinogram::zeros(crate::geometry::uniform_angles(4), 16, 1).unwrap().with_detector_offset(0.5);
        assert!(r.back_project(&offset).is_err());
    }
}
