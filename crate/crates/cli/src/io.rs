//! Raw little-endian `f64` payloads with a JSON sidecar at `<path>.json`.
//!
//! Volumes are written slice-major as `[slices, y, x]` (a single slice drops
//! the leading axis), sinograms as `[slices, angle, bin]`.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tomoforge_core::geometry::{Sinogram, Volume};

use crate::error::{CliError, Result};

pub const DTYPE: &str = "f64le";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArrayKind {
    Volume,
    Sinogram,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Header {
    pub kind: ArrayKind,
    pub dims: Vec<usize>,
    pub axis_order: Vec<String>,
    pub dtype: String,
    pub pixel_size: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub angles: Option<Vec<f64>>,
    #[serde(default)]
    pub detector_offset: f64,
}

impl Header {
    pub fn elements(&self) -> usize {
        self.dims.iter().product()
    }

    fn validate(&self, path: &Path) -> Result<()> {
        let bad = |msg: String| Err(CliError::io(path, msg));
        if self.dtype != DTYPE {
            return bad(format!("unsupported dtype '{}', expected {DTYPE}", self.dtype));
        }
        if self.dims.is_empty() || self.dims.contains(&0) {
            return bad(format!("dims {:?} must be non-empty and positive", self.dims));
        }
        if self.axis_order.len() != self.dims.len() {
            return bad(format!("{} axis names for {} dims", self.axis_order.len(), self.dims.len()));
        }
        Ok(())
    }
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

fn axes(names: &[&str]) -> Vec<String> {
    names.iter().map(|s| s.to_string()).collect()
}

pub fn volume_header(vol: &Volume) -> Header {
    let n = vol.side();
    let (dims, order) = if vol.slices() == 1 {
        (vec![n, n], axes(&["y", "x"]))
    } else {
        (vec![vol.slices(), n, n], axes(&["z", "y", "x"]))
    };
    Header {
        kind: ArrayKind::Volume,
        dims,
        axis_order: order,
        dtype: DTYPE.into(),
        pixel_size: vol.pixel_size(),
        angles: None,
        detector_offset: 0.0,
    }
}

pub fn sinogram_header(sino: &Sinogram) -> Header {
    let (p, d) = (sino.n_angles(), sino.detector_bins());
    let (dims, order) = if sino.slices() == 1 {
        (vec![p, d], axes(&["angle", "bin"]))
    } else {
        (vec![sino.slices(), p, d], axes(&["z", "angle", "bin"]))
    };
    Header {
        kind: ArrayKind::Sinogram,
        dims,
        axis_order: order,
        dtype: DTYPE.into(),
        pixel_size: 1.0,
        angles: Some(sino.angles().to_vec()),
        detector_offset: sino.detector_offset(),
    }
}

/// Writes `data` and its sidecar.
pub fn write_raw(path: &Path, header: &Header, data: &[f64]) -> Result<()> {
    debug_assert_eq!(header.elements(), data.len());
    let file = fs::File::create(path).map_err(|e| CliError::io(path, e))?;
    let mut w = BufWriter::new(file);
    for v in data {
        w.write_all(&v.to_le_bytes()).map_err(|e| CliError::io(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))?;
    let side = sidecar_path(path);
    let json = serde_json::to_string_pretty(header).map_err(|e| CliError::io(&side, e))?;
    fs::write(&side, json + "\n").map_err(|e| CliError::io(&side, e))
}

pub fn read_header(path: &Path) -> Result<Header> {
    let side = sidecar_path(path);
    let text = fs::read_to_string(&side).map_err(|e| CliError::io(&side, e))?;
    let header: Header = serde_json::from_str(&text).map_err(|e| CliError::io(&side, e))?;
    header.validate(&side)?;
    Ok(header)
}

pub fn read_raw(path: &Path) -> Result<(Header, Vec<f64>)> {
    let header = read_header(path)?;
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    let expected = 8 * header.elements();
    if bytes.len() != expected {
        return Err(CliError::io(
            path,
            format!("payload has {} bytes, header dims {:?} need {expected}", bytes.len(), header.dims),
        ));
    }
    let data = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    Ok((header, data))
}

pub fn save_volume(path: &Path, vol: &Volume) -> Result<()> {
    write_raw(path, &volume_header(vol), vol.data())
}

pub fn load_volume(path: &Path) -> Result<Volume> {
    let (h, data) = read_raw(path)?;
    if h.kind != ArrayKind::Volume {
        return Err(CliError::io(path, "file holds a sinogram, not a volume"));
    }
    let (slices, ny, nx) = match h.dims[..] {
        [ny, nx] => (1, ny, nx),
        [z, ny, nx] => (z, ny, nx),
        _ => return Err(CliError::io(path, format!("volume dims {:?} must have 2 or 3 axes", h.dims))),
    };
    if ny != nx {
        return Err(CliError::io(path, format!("only square slices are supported, got {ny}x{nx}")));
    }
    let vol = Volume::new(slices, nx, data).map_err(|e| CliError::io(path, e))?;
    Ok(vol.with_pixel_size(h.pixel_size))
}

pub fn save_sinogram(path: &Path, sino: &Sinogram) -> Result<()> {
    write_raw(path, &sinogram_header(sino), sino.data())
}

pub fn load_sinogram(path: &Path) -> Result<Sinogram> {
    let (h, data) = read_raw(path)?;
    if h.kind != ArrayKind::Sinogram {
        return Err(CliError::io(path, "file holds a volume, not a sinogram"));
    }
    let (slices, p, d) = match h.dims[..] {
        [p, d] => (1, p, d),
        [z, p, d] => (z, p, d),
        _ => return Err(CliError::io(path, format!("sinogram dims {:?} must have 2 or 3 axes", h.dims))),
    };
    let angles = h.angles.ok_or_else(|| CliError::io(path, "sinogram header lacks angles"))?;
    if angles.len() != p {
        return Err(CliError::io(path, format!("{} angles listed for {p} projections", angles.len())));
    }
    let sino = Sinogram::new(angles, d, slices, data).map_err(|e| CliError::io(path, e))?;
    Ok(sino.with_detector_offset(h.detector_offset))
}
