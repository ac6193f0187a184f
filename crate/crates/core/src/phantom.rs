//! Test phantoms.

use crate::error::{Result, TomoError};
use crate::geometry::{centered, ImageGrid, Volume};

struct Ellipse {
    value: f64,
    a: f64,
    b: f64,
    x0: f64,
    y0: f64,
    phi_deg: f64,
}

// Modified Shepp-Logan parameters (intensities chosen so the image lies in [0, 1]).
const SHEPP_LOGAN: [Ellipse; 10] = [
    Ellipse { value: 1.0, a: 0.69, b: 0.92, x0: 0.0, y0: 0.0, phi_deg: 0.0 },
    Ellipse { value: -0.8, a: 0.6624, b: 0.874, x0: 0.0, y0: -0.0184, phi_deg: 0.0 },
    Ellipse { value: -0.2, a: 0.11, b: 0.31, x0: 0.22, y0: 0.0, phi_deg: -18.0 },
    Ellipse { value: -0.2, a: 0.16, b: 0.41, x0: -0.22, y0: 0.0, phi_deg: 18.0 },
    Ellipse { value: 0.1, a: 0.21, b: 0.25, x0: 0.0, y0: 0.35, phi_deg: 0.0 },
    Ellipse { value: 0.1, a: 0.046, b: 0.046, x0: 0.0, y0: 0.1, phi_deg: 0.0 },
    Ellipse { value: 0.1, a: 0.046, b: 0.046, x0: 0.0, y0: -0.1, phi_deg: 0.0 },
    Ellipse { value: 0.1, a: 0.046, b: 0.023, x0: -0.08, y0: -0.605, phi_deg: 0.0 },
    Ellipse { value: 0.1, a: 0.023, b: 0.023, x0: 0.0, y0: -0.606, phi_deg: 0.0 },
    Ellipse { value: 0.1, a: 0.023, b: 0.046, x0: 0.06, y0: -0.605, phi_deg: 0.0 },
];

/// Phantom intensity at normalized coordinates in `[-1, 1]^2`. With `z`, each
/// ellipse is shrunk to its ellipsoid cross-section at that height.
fn shepp_logan_value(x: f64, y: f64, z: Option<f64>) -> f64 {
    let mut v = 0.0;
    for e in &SHEPP_LOGAN {
        let scale = match z {
            None => 1.0,
            Some(z) => {
                // ellipsoid whose third semi-axis equals the ellipse's b axis
                let r = z / e.b;
                if r.abs() >= 1.0 {
                    continue;
                }
                (1.0 - r * r).sqrt()
            }
        };
        let (s, c) = e.phi_deg.to_radians().sin_cos();
        let dx = x - e.x0;
        let dy = y - e.y0;
        let u = (dx * c + dy * s) / (e.a * scale);
        let w = (-dx * s + dy * c) / (e.b * scale);
        if u * u + w * w <= 1.0 {
            v += e.value;
        }
    }
    v
}

fn shepp_logan_plane(side: usize, z: Option<f64>) -> ImageGrid {
    let half = side as f64 / 2.0;
    ImageGrid::from_fn(side, |ix, iy| {
        let x = centered(ix, side) / half;
        // row 0 is the top of the displayed image
        let y = -centered(iy, side) / half;
        shepp_logan_value(x, y, z).clamp(0.0, 1.0)
    })
}

/// 2D Shepp-Logan phantom on a `side x side` grid.
pub fn shepp_logan(side: usize) -> Result<ImageGrid> {
    if side < 8 {
        return Err(TomoError::InvalidParameter(format!(
            "phantom side {side} < 8"
        )));
    }
    Ok(shepp_logan_plane(side, None))
}

/// 3D variant: each ellipse becomes an ellipsoid, sampled at slice centres
/// spread over `[-1, 1]` along the rotation axis.
pub fn shepp_logan_3d(side: usize, slices: usize) -> Result<Volume> {
    if side < 8 {
        return Err(TomoError::InvalidParameter(format!(
            "phantom side {side} < 8"
        )));
    }
    if slices == 0 {
        return Err(TomoError::InvalidParameter("slices must be positive".into()));
    }
    let planes: Vec<ImageGrid> = (0..slices)
        .map(|k| {
            let z = centered(k, slices) / (slices as f64 / 2.0);
            shepp_logan_plane(side, Some(z))
        })
        .collect();
    Volume::from_slices(&planes)
}

/// Centred disk of `value` (pixel-centre test: distance < radius).
pub fn disk_phantom(side: usize, radius: f64, value: f64) -> Result<ImageGrid> {
    if !(radius > 0.0 && radius <= side as f64 / 2.0) {
        return Err(TomoError::InvalidParameter(format!(
            "disk radius {radius} outside (0, {}]",
            side as f64 / 2.0
        )));
    }
    let r2 = radius * radius;
    Ok(ImageGrid::from_fn(side, |ix, iy| {
        let x = centered(ix, side);
        let y = centered(iy, side);
        if x * x + y * y < r2 {
            value
        } else {
            0.0
        }
    }))
}

/// Separable Gaussian blur (kernel truncated at 3 sigma, renormalized at the edges).
pub fn gaussian_blur(img: &ImageGrid, sigma: f64) -> Result<ImageGrid> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(TomoError::InvalidParameter(format!("blur sigma {sigma} must be positive")));
    }
    let n = img.side();
    let r = (3.0 * sigma).ceil() as i64;
    let k: Vec<f64> = (-r..=r).map(|d| (-((d * d) as f64) / (2.0 * sigma * sigma)).exp()).collect();
    let pass = |src: &[f64], along_x: bool| -> Vec<f64> {
        let mut out = vec![0.0; n * n];
        for iy in 0..n {
            for ix in 0..n {
                let (mut s, mut w) = (0.0, 0.0);
                for (j, kj) in k.iter().enumerate() {
                    let d = j as i64 - r;
                    let (x, y) = if along_x { (ix as i64 + d, iy as i64) } else { (ix as i64, iy as i64 + d) };
                    if x < 0 || y < 0 || x >= n as i64 || y >= n as i64 {
                        continue;
                    }
                    s += kj * src[y as usize * n + x as usize];
                    w += kj;
                }
                out[iy * n + ix] = s / w;
            }
        }
        out
    };
    let data = pass(&pass(img.data(), true), false);
    ImageGrid::new(n, data)
}
