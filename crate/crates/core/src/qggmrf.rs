//! Edge-preserving q-generalized Gaussian MRF prior on pairwise differences.
//!
//! `rho(d) = |d|^p / (p sigma^p) / (1 + |d / (T sigma)|^(p-q))`: quadratic for
//! `|d| << T sigma`, growing like `|d|^q` beyond it.
//!
//! Neighbours outside the volume contribute nothing unless a halo plane stands
//! in for them. With that rule [`prior_grad`] is exactly the gradient of
//! [`prior_energy`], which the solver's descent checks rely on.

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Result, TomoError};
use crate::geometry::Volume;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QggmrfParams {
    pub p: f64,
    pub q: f64,
    #[serde(rename = "T")]
    pub t: f64,
    pub sigma: f64,
    pub lambda: f64,
}

impl QggmrfParams {
    /// Standard shape `p = 2, q = 1.2, T = 1`.
    pub fn new(sigma: f64, lambda: f64) -> Result<Self> {
        let params = Self {
            p: 2.0,
            q: 1.2,
            t: 1.0,
            sigma,
            lambda,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn with_shape(mut self, p: f64, q: f64, t: f64) -> Result<Self> {
        self.p = p;
        self.q = q;
        self.t = t;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = 1.0 <= self.q && self.q < self.p && self.p <= 2.0 && self.t > 0.0 && self.sigma > 0.0 && self.lambda >= 0.0;
        if !ok || !(self.sigma.is_finite() && self.lambda.is_finite() && self.t.is_finite()) {
            return Err(TomoError::InvalidParameter(format!(
                "qGGMRF needs 1 <= q < p <= 2, T > 0, sigma > 0, lambda >= 0 (got p={}, q={}, T={}, sigma={}, lambda={})",
                self.p, self.q, self.t, self.sigma, self.lambda
            )));
        }
        Ok(())
    }

    #[inline]
    fn abs_pow_p(&self, a: f64) -> f64 {
        if self.p == 2.0 {
            a * a
        } else {
            a.powf(self.p)
        }
    }

    #[inline]
    fn ratio(&self, a: f64) -> f64 {
        (a / (self.t * self.sigma)).powf(self.p - self.q)
    }

    pub fn potential(&self, delta: f64) -> f64 {
        let a = delta.abs();
        if a == 0.0 {
            return 0.0;
        }
        self.abs_pow_p(a) / (self.p * self.sigma.powf(self.p)) / (1.0 + self.ratio(a))
    }

    pub fn potential_deriv(&self, delta: f64) -> f64 {
        let a = delta.abs();
        if a == 0.0 {
            return 0.0;
        }
        let v = self.ratio(a);
        let a_pm1 = if self.p == 2.0 { a } else { a.powf(self.p - 1.0) };
        let mag = a_pm1 * (self.p + self.q * v) / (self.p * self.sigma.powf(self.p) * (1.0 + v) * (1.0 + v));
        mag.copysign(delta)
    }

    /// Curvature bound of the prior term for the step size: `lambda * 2 / sigma^p * sum(b)`.
    /// A true bound when `p = 2` (where `rho''` peaks at the origin at `1/sigma^2`).
    pub fn lipschitz_bound(&self, stencil: &NeighborStencil) -> f64 {
        self.lambda * 2.0 / self.sigma.powf(self.p) * stencil.weights().iter().sum::<f64>()
    }
}

/// `sigma` heuristic: a tenth of the dynamic range of an estimate.
pub fn sigma_from_range(values: &[f64]) -> f64 {
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let range = hi - lo;
    if range.is_finite() && range > 0.0 {
        0.1 * range
    } else {
        1.0
    }
}

/// Neighbour offsets `(dz, dy, dx)` with inverse-distance weights summing to one.
#[derive(Clone, Debug, PartialEq)]
pub struct NeighborStencil {
    offsets: Vec<[i64; 3]>,
    weights: Vec<f64>,
}

impl NeighborStencil {
    /// 26-neighbour cube.
    pub fn three_d() -> Self {
        Self::build(-1..=1)
    }

    /// 8-neighbour square within a slice.
    pub fn two_d() -> Self {
        Self::build(0..=0)
    }

    /// 2D for single-slice problems, 3D otherwise.
    pub fn for_slices(slices: usize) -> Self {
        if slices == 1 {
            Self::two_d()
        } else {
            Self::three_d()
        }
    }

    fn build(zs: std::ops::RangeInclusive<i64>) -> Self {
        let mut offsets = Vec::new();
        for dz in zs {
            for dy in -1..=1 {
                for dx in -1..=1 {
                    if (dz, dy, dx) != (0, 0, 0) {
                        offsets.push([dz, dy, dx]);
                    }
                }
            }
        }
        let raw: Vec<f64> = offsets
            .iter()
            .map(|o| 1.0 / ((o[0] * o[0] + o[1] * o[1] + o[2] * o[2]) as f64).sqrt())
            .collect();
        let sum: f64 = raw.iter().sum();
        Self {
            offsets,
            weights: raw.iter().map(|w| w / sum).collect(),
        }
    }

    pub fn offsets(&self) -> &[[i64; 3]] {
        &self.offsets
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.offsets.len()
    }

    /// The offsets that are lexicographically positive in `(dz, dy, dx)`,
    /// one from each `+s / -s` pair, with their weights.
    pub fn half(&self) -> impl Iterator<Item = ([i64; 3], f64)> + '_ {
        self.offsets
            .iter()
            .zip(&self.weights)
            .filter(|(o, _)| **o > [0, 0, 0])
            .map(|(o, w)| (*o, *w))
    }

    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }
}

/// A contiguous run of slices plus the planes just below and above it.
#[derive(Clone, Copy, Debug)]
pub struct SlabView<'a> {
    pub data: &'a [f64],
    pub slices: usize,
    pub side: usize,
    pub halo_lo: Option<&'a [f64]>,
    pub halo_hi: Option<&'a [f64]>,
}

impl<'a> SlabView<'a> {
    pub fn new(data: &'a [f64], slices: usize, side: usize, halo_lo: Option<&'a [f64]>, halo_hi: Option<&'a [f64]>) -> Result<Self> {
        let plane = side * side;
        check_len("slab data", slices * plane, data.len())?;
        if let Some(h) = halo_lo {
            check_len("lower halo plane", plane, h.len())?;
        }
        if let Some(h) = halo_hi {
            check_len("upper halo plane", plane, h.len())?;
        }
        Ok(Self {
            data,
            slices,
            side,
            halo_lo,
            halo_hi,
        })
    }

    fn plane(&self, z: i64) -> Option<&'a [f64]> {
        let len = self.side * self.side;
        if z < 0 {
            if z == -1 {
                self.halo_lo
            } else {
                None
            }
        } else if (z as usize) < self.slices {
            let z = z as usize;
            Some(&self.data[z * len..(z + 1) * len])
        } else if z as usize == self.slices {
            self.halo_hi
        } else {
            None
        }
    }

    /// Visits every available pair `(v, v + o)` for a lexicographically
    /// positive offset `o`, in increasing order of `v`'s global position.
    /// Passes the two plane indices (-1 and `slices` denote halos), the row
    /// offsets within those planes, and the aligned value runs.
    #[inline]
    fn for_pairs(&self, o: [i64; 3], mut visit: impl FnMut(i64, i64, usize, usize, &[f64], &[f64])) {
        let n = self.side as i64;
        let (dz, dy, dx) = (o[0], o[1], o[2]);
        let (y0, y1) = ((-dy).max(0), (n - dy).min(n));
        let (x0, x1) = ((-dx).max(0) as usize, (n - dx).min(n) as usize);
        let owned = |z: i64| z >= 0 && (z as usize) < self.slices;
        for zv in -1..self.slices as i64 {
            let zw = zv + dz;
            if !owned(zv) && !owned(zw) {
                continue;
            }
            let (Some(pv), Some(pw)) = (self.plane(zv), self.plane(zw)) else { continue };
            for y in y0..y1 {
                let rv = y as usize * self.side + x0;
                let rw = ((y + dy) as usize * self.side) + (x0 as i64 + dx) as usize;
                let len = x1 - x0;
                visit(zv, zw, rv, rw, &pv[rv..rv + len], &pw[rw..rw + len]);
            }
        }
    }
}

/// Gradient of [`prior_energy_raw`] over the slab's own voxels, written to `out`.
pub fn prior_grad_raw(params: &QggmrfParams, stencil: &NeighborStencil, slab: &SlabView, out: &mut [f64]) -> Result<()> {
    let plane = slab.side * slab.side;
    check_len("prior gradient output", slab.slices * plane, out.len())?;
    out.iter_mut().for_each(|v| *v = 0.0);
    let owned = |z: i64| z >= 0 && (z as usize) < slab.slices;
    // Each pair is evaluated once and scattered to both ends. Loops run in
    // global voxel order, so every voxel receives its terms in the same
    // sequence however the volume is split into slabs: bitwise identical.
    for (o, b) in stencil.half() {
        slab.for_pairs(o, |zv, zw, rv, rw, v, w| {
            let (ov, ow) = (owned(zv), owned(zw));
            let bv = zv.max(0) as usize * plane + rv;
            let bw = zw.max(0) as usize * plane + rw;
            for (i, (&a, &c)) in v.iter().zip(w).enumerate() {
                let d = b * params.potential_deriv(a - c);
                if ov {
                    out[bv + i] += d;
                }
                if ow {
                    out[bw + i] -= d;
                }
            }
        });
    }
    Ok(())
}

/// Per-slice clique energy: each unordered pair `(v, v + s)` is charged once,
/// to the slice holding `v`. The sum over all slices is `E(f)`.
pub fn prior_energy_raw(params: &QggmrfParams, stencil: &NeighborStencil, slab: &SlabView) -> Vec<f64> {
    let mut per_slice = vec![0.0; slab.slices];
    for (o, b) in stencil.half() {
        slab.for_pairs(o, |zv, _, _, _, v, w| {
            if zv < 0 {
                return;
            }
            let s: f64 = v.iter().zip(w).map(|(&a, &c)| params.potential(a - c)).sum();
            per_slice[zv as usize] += b * s;
        });
    }
    per_slice
}

pub fn prior_grad(
    params: &QggmrfParams,
    stencil: &NeighborStencil,
    vol: &Volume,
    halo_lo: Option<&[f64]>,
    halo_hi: Option<&[f64]>,
) -> Result<Volume> {
    let slab = SlabView::new(vol.data(), vol.slices(), vol.side(), halo_lo, halo_hi)?;
    let mut out = Volume::zeros(vol.slices(), vol.side());
    prior_grad_raw(params, stencil, &slab, out.data_mut())?;
    Ok(out)
}

/// Unweighted clique energy `E(f)` (no `lambda`).
pub fn prior_energy(params: &QggmrfParams, stencil: &NeighborStencil, vol: &Volume) -> f64 {
    let slab = SlabView {
        data: vol.data(),
        slices: vol.slices(),
        side: vol.side(),
        halo_lo: None,
        halo_hi: None,
    };
    prior_energy_raw(params, stencil, &slab).iter().sum()
}
