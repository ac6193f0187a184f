//! 8-bit slice export. Each slice is min-max windowed and the window goes
//! into the file name, e.g. `head_win-0.0123_1.0042.png`.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{GrayImage, ImageFormat};

use crate::error::{CliError, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Window {
    pub lo: f64,
    pub hi: f64,
}

impl Window {
    pub fn of(values: &[f64]) -> Self {
        let (lo, hi) = values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        Self { lo, hi }
    }

    pub fn to_u8(&self, v: f64) -> u8 {
        let span = self.hi - self.lo;
        if !(span > 0.0) {
            return 0;
        }
        (((v - self.lo) / span).clamp(0.0, 1.0) * 255.0).round() as u8
    }
}

/// `dir/stem.ext` becomes `dir/stem_win{lo}_{hi}.ext`.
pub fn windowed_path(out: &Path, w: Window) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let ext = out.extension().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    out.with_file_name(format!("{stem}_win{:.4}_{:.4}.{ext}", w.lo, w.hi))
}

/// Writes a `side x side` slice as PNG or binary PGM, chosen by the
/// extension of `out`, and returns the path actually written.
pub fn export_slice(plane: &[f64], side: usize, out: &Path) -> Result<(PathBuf, Window)> {
    let ext = out.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
    let w = Window::of(plane);
    let img = GrayImage::from_fn(side as u32, side as u32, |x, y| image::Luma([w.to_u8(plane[y as usize * side + x as usize])]));
    let path = windowed_path(out, w);
    match ext.as_deref() {
        Some("png") => img.save_with_format(&path, ImageFormat::Png).map_err(|e| CliError::io(&path, e))?,
        Some("pgm") => {
            let f = File::create(&path).map_err(|e| CliError::io(&path, e))?;
            let enc = PnmEncoder::new(BufWriter::new(f)).with_subtype(PnmSubtype::Graymap(SampleEncoding::Binary));
            img.write_with_encoder(enc).map_err(|e| CliError::io(&path, e))?;
        }
        _ => return Err(CliError::Usage(format!("{}: export needs a .png or .pgm file name", out.display()))),
    }
    Ok((path, w))
}
