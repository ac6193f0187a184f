//! Grids, sinograms, scan geometry and the polar Fourier sampling pattern.
//!
//! Coordinate conventions shared by every operator in the crate:
//!
//! * object pixel `(ix, iy)` of an `N x N` grid sits at
//!   `x = ix - (N-1)/2`, `y = iy - (N-1)/2` (pixel units);
//! * detector bin `j` of `N_d` bins sits at `t = j - (N_d-1)/2 + offset`;
//! * radial frequencies are `omega_j = 2 pi j / N_d` for
//!   `j = -floor(N_d/2) ..= ceil(N_d/2) - 1`, in radians per pixel.

use std::f64::consts::PI;

use crate::error::{check_len, Result, TomoError};

/// Centered coordinate of sample `i` on an axis of `n` samples.
#[inline]
pub fn centered(i: usize, n: usize) -> f64 {
    i as f64 - (n as f64 - 1.0) / 2.0
}

/// Signed radial index range for `n` detector bins, ascending.
pub fn radial_indices(n: usize) -> impl Iterator<Item = i64> {
    let lo = -((n / 2) as i64);
    let hi = n as i64 - n as i64 / 2 - 1;
    lo..=hi
}

fn check_finite(data: &[f64]) -> Result<()> {
    if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
        return Err(TomoError::InvalidParameter(format!(
            "non-finite value at index {pos}"
        )));
    }
    Ok(())
}

/// Square 2D image, row-major (`data[iy * side + ix]`).
#[derive(Clone, Debug, PartialEq)]
pub struct ImageGrid {
    side: usize,
    pixel_size: f64,
    data: Vec<f64>,
}

impl ImageGrid {
    pub fn new(side: usize, data: Vec<f64>) -> Result<Self> {
        if side == 0 {
            return Err(TomoError::InvalidGeometry("image side must be positive".into()));
        }
        check_len("image data", side * side, data.len())?;
        check_finite(&data)?;
        Ok(Self {
            side,
            pixel_size: 1.0,
            data,
        })
    }

    pub fn zeros(side: usize) -> Self {
        Self {
            side,
            pixel_size: 1.0,
            data: vec![0.0; side * side],
        }
    }

    /// Builds an image by evaluating `f(ix, iy)` at every pixel.
    pub fn from_fn(side: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(side * side);
        for iy in 0..side {
            for ix in 0..side {
                data.push(f(ix, iy));
            }
        }
        Self {
            side,
            pixel_size: 1.0,
            data,
        }
    }

    pub fn with_pixel_size(mut self, pixel_size: f64) -> Self {
        self.pixel_size = pixel_size;
        self
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn width(&self) -> usize {
        self.side
    }

    pub fn height(&self) -> usize {
        self.side
    }

    pub fn pixel_size(&self) -> f64 {
        self.pixel_size
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, ix: usize, iy: usize) -> f64 {
        self.data[iy * self.side + ix]
    }
}

/// Stack of square slices along the rotation axis, slice-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Volume {
    slices: usize,
    side: usize,
    pixel_size: f64,
    data: Vec<f64>,
}

impl Volume {
    pub fn new(slices: usize, side: usize, data: Vec<f64>) -> Result<Self> {
        if slices == 0 || side == 0 {
            return Err(TomoError::InvalidGeometry(
                "volume needs at least one slice and a positive side".into(),
            ));
        }
        check_len("volume data", slices * side * side, data.len())?;
        check_finite(&data)?;
        Ok(Self {
            slices,
            side,
            pixel_size: 1.0,
            data,
        })
    }

    pub fn zeros(slices: usize, side: usize) -> Self {
        Self {
            slices,
            side,
            pixel_size: 1.0,
            data: vec![0.0; slices * side * side],
        }
    }

    pub fn from_slices(images: &[ImageGrid]) -> Result<Self> {
        let first = images
            .first()
            .ok_or_else(|| TomoError::InvalidGeometry("no slices given".into()))?;
        let side = first.side();
        let mut data = Vec::with_capacity(images.len() * side * side);
        for img in images {
            check_len("slice side", side, img.side())?;
            data.extend_from_slice(img.data());
        }
        Ok(Self {
            slices: images.len(),
            side,
            pixel_size: first.pixel_size(),
            data,
        })
    }

    pub fn with_pixel_size(mut self, pixel_size: f64) -> Self {
        self.pixel_size = pixel_size;
        self
    }

    pub fn slices(&self) -> usize {
        self.slices
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn pixel_size(&self) -> f64 {
        self.pixel_size
    }

    pub fn plane_len(&self) -> usize {
        self.side * self.side
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn slice(&self, z: usize) -> &[f64] {
        let n = self.plane_len();
        &self.data[z * n..(z + 1) * n]
    }

    pub fn slice_mut(&mut self, z: usize) -> &mut [f64] {
        let n = self.plane_len();
        &mut self.data[z * n..(z + 1) * n]
    }

    pub fn slice_image(&self, z: usize) -> ImageGrid {
        ImageGrid {
            side: self.side,
            pixel_size: self.pixel_size,
            data: self.slice(z).to_vec(),
        }
    }

    /// Copy of slices `[begin, end)`.
    pub fn sub_volume(&self, begin: usize, end: usize) -> Volume {
        let n = self.plane_len();
        Volume {
            slices: end - begin,
            side: self.side,
            pixel_size: self.pixel_size,
            data: self.data[begin * n..end * n].to_vec(),
        }
    }
}

impl From<ImageGrid> for Volume {
    fn from(img: ImageGrid) -> Self {
        Volume {
            slices: 1,
            side: img.side,
            pixel_size: img.pixel_size,
            data: img.data,
        }
    }
}

/// Projection data ordered `(slice, angle, bin)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Sinogram {
    angles: Vec<f64>,
    detector_bins: usize,
    slices: usize,
    detector_offset: f64,
    data: Vec<f64>,
}

pub(crate) fn validate_angles(angles: &[f64]) -> Result<()> {
    if angles.is_empty() {
        return Err(TomoError::InvalidGeometry("angle list is empty".into()));
    }
    for (i, &a) in angles.iter().enumerate() {
        if !(0.0..PI).contains(&a) {
            return Err(TomoError::InvalidGeometry(format!(
                "angle {i} = {a} outside [0, pi)"
            )));
        }
        if i > 0 && a <= angles[i - 1] {
            return Err(TomoError::InvalidGeometry(format!(
                "angles not strictly increasing at index {i}"
            )));
        }
    }
    Ok(())
}

impl Sinogram {
    pub fn new(angles: Vec<f64>, detector_bins: usize, slices: usize, data: Vec<f64>) -> Result<Self> {
        validate_angles(&angles)?;
        if detector_bins == 0 || slices == 0 {
            return Err(TomoError::InvalidGeometry(
                "sinogram needs detector bins and slices".into(),
            ));
        }
        check_len("sinogram data", slices * angles.len() * detector_bins, data.len())?;
        check_finite(&data)?;
        Ok(Self {
            angles,
            detector_bins,
            slices,
            detector_offset: 0.0,
            data,
        })
    }

    pub fn zeros(angles: Vec<f64>, detector_bins: usize, slices: usize) -> Result<Self> {
        let len = slices * angles.len() * detector_bins;
        Self::new(angles, detector_bins, slices, vec![0.0; len])
    }

    /// Shift of the detector centre in bin units (see module docs).
    pub fn with_detector_offset(mut self, offset: f64) -> Self {
        self.detector_offset = offset;
        self
    }

    pub fn angles(&self) -> &[f64] {
        &self.angles
    }

    pub fn n_angles(&self) -> usize {
        self.angles.len()
    }

    pub fn detector_bins(&self) -> usize {
        self.detector_bins
    }

    pub fn slices(&self) -> usize {
        self.slices
    }

    pub fn detector_offset(&self) -> f64 {
        self.detector_offset
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn slice_len(&self) -> usize {
        self.angles.len() * self.detector_bins
    }

    pub fn slice(&self, z: usize) -> &[f64] {
        let n = self.slice_len();
        &self.data[z * n..(z + 1) * n]
    }

    pub fn slice_mut(&mut self, z: usize) -> &mut [f64] {
        let n = self.slice_len();
        &mut self.data[z * n..(z + 1) * n]
    }

    pub fn row(&self, z: usize, angle: usize) -> &[f64] {
        let start = z * self.slice_len() + angle * self.detector_bins;
        &self.data[start..start + self.detector_bins]
    }

    pub fn row_mut(&mut self, z: usize, angle: usize) -> &mut [f64] {
        let start = z * self.slice_len() + angle * self.detector_bins;
        let bins = self.detector_bins;
        &mut self.data[start..start + bins]
    }

    /// Sinogram holding only slice `z`.
    pub fn single_slice(&self, z: usize) -> Sinogram {
        Sinogram {
            angles: self.angles.clone(),
            detector_bins: self.detector_bins,
            slices: 1,
            detector_offset: self.detector_offset,
            data: self.slice(z).to_vec(),
        }
    }

    pub fn geometry(&self, image_side: usize) -> Result<ScanGeometry> {
        ScanGeometry::new(self.angles.clone(), self.detector_bins, image_side)
            .map(|g| g.with_detector_offset(self.detector_offset))
    }
}

/// Parallel-beam acquisition geometry.
#[derive(Clone, Debug, PartialEq)]
pub struct ScanGeometry {
    angles: Vec<f64>,
    detector_bins: usize,
    image_side: usize,
    detector_offset: f64,
}

impl ScanGeometry {
    pub fn new(angles: Vec<f64>, detector_bins: usize, image_side: usize) -> Result<Self> {
        validate_angles(&angles)?;
        if detector_bins == 0 {
            return Err(TomoError::InvalidGeometry("detector_bins must be positive".into()));
        }
        if image_side == 0 {
            return Err(TomoError::InvalidGeometry("image side must be positive".into()));
        }
        if detector_bins < image_side {
            return Err(TomoError::InvalidGeometry(format!(
                "detector ({detector_bins} bins) narrower than object ({image_side} px)"
            )));
        }
        Ok(Self {
            angles,
            detector_bins,
            image_side,
            detector_offset: 0.0,
        })
    }

    /// `n_angles` equispaced angles over `[0, pi)`.
    pub fn uniform(n_angles: usize, detector_bins: usize, image_side: usize) -> Result<Self> {
        Self::new(uniform_angles(n_angles), detector_bins, image_side)
    }

    pub fn with_detector_offset(mut self, offset: f64) -> Self {
        self.detector_offset = offset;
        self
    }

    pub fn angles(&self) -> &[f64] {
        &self.angles
    }

    pub fn detector_bins(&self) -> usize {
        self.detector_bins
    }

    pub fn image_side(&self) -> usize {
        self.image_side
    }

    pub fn detector_offset(&self) -> f64 {
        self.detector_offset
    }

    /// Physical position of detector bin `j`.
    pub fn bin_position(&self, j: usize) -> f64 {
        centered(j, self.detector_bins) + self.detector_offset
    }
}

pub fn uniform_angles(n: usize) -> Vec<f64> {
    (0..n).map(|k| PI * k as f64 / n as f64).collect()
}

/// The polar set of frequencies `(omega cos theta, omega sin theta)`.
#[derive(Clone, Debug, PartialEq)]
pub struct PolarSampling {
    angles: Vec<f64>,
    radial_count: usize,
    omegas: Vec<f64>,
    samples: Vec<[f64; 2]>,
}

impl PolarSampling {
    pub fn angles(&self) -> &[f64] {
        &self.angles
    }

    pub fn radial_count(&self) -> usize {
        self.radial_count
    }

    /// Radial frequencies, ascending.
    pub fn omegas(&self) -> &[f64] {
        &self.omegas
    }

    /// `(k_x, k_y)` pairs ordered angle-major, radial ascending.
    pub fn samples(&self) -> &[[f64; 2]] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

pub fn polar_sampling(geom: &ScanGeometry) -> Result<PolarSampling> {
    polar_sampling_raw(geom.angles(), geom.detector_bins())
}

pub(crate) fn polar_sampling_raw(angles: &[f64], bins: usize) -> Result<PolarSampling> {
    if angles.is_empty() {
        return Err(TomoError::InvalidGeometry("angle list is empty".into()));
    }
    if bins == 0 {
        return Err(TomoError::InvalidGeometry("detector_bins must be positive".into()));
    }
    let omegas: Vec<f64> = radial_indices(bins)
        .map(|j| 2.0 * PI * j as f64 / bins as f64)
        .collect();
    let mut samples = Vec::with_capacity(angles.len() * bins);
    for &theta in angles {
        let (s, c) = theta.sin_cos();
        for &w in &omegas {
            samples.push([w * c, w * s]);
        }
    }
    Ok(PolarSampling {
        angles: angles.to_vec(),
        radial_count: bins,
        omegas,
        samples,
    })
}
