//! Perspective fallback: four-point homography and inverse warping.

use std::path::Path;

use nalgebra::{Matrix3, SMatrix, Vector3};

use super::OrthoImage;
use crate::error::{Error, Result};

/// A source pixel and the output pixel it should land on. Pixel centers
/// sit at integer coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correspondence {
    pub source: [f64; 2],
    pub target: [f64; 2],
}

/// Projective map between pixel planes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Homography(pub Matrix3<f64>);

impl Homography {
    pub fn apply(&self, p: [f64; 2]) -> [f64; 2] {
        let q = self.0 * Vector3::new(p[0], p[1], 1.0);
        [q.x / q.z, q.y / q.z]
    }

    pub fn inverse(&self) -> Option<Homography> {
        self.0.try_inverse().map(Homography)
    }

    /// Direct linear estimate from exactly four correspondences, with
    /// Hartley normalization. Fails if any three points on either side are
    /// collinear.
    pub fn from_correspondences(corr: &[Correspondence; 4]) -> Result<Self> {
        let src = corr.map(|c| c.source);
        let dst = corr.map(|c| c.target);
        check_general_position(&src, "source")?;
        check_general_position(&dst, "target")?;
        let (ts, ns) = normalizer(&src);
        let (td, nd) = normalizer(&dst);

        let mut a = SMatrix::<f64, 9, 9>::zeros();
        for i in 0..4 {
            let [x, y] = ns[i];
            let [u, v] = nd[i];
            let r0 = [-x, -y, -1.0, 0.0, 0.0, 0.0, u * x, u * y, u];
            let r1 = [0.0, 0.0, 0.0, -x, -y, -1.0, v * x, v * y, v];
            for j in 0..9 {
                a[(2 * i, j)] = r0[j];
                a[(2 * i + 1, j)] = r1[j];
            }
        }
        let svd = a.svd(false, true);
        let v_t = svd
            .v_t
            .ok_or_else(|| Error::DegenerateGeometry("homography SVD failed".into()))?;
        let k = svd.singular_values.imin();
        let h = v_t.row(k);
        let hn = Matrix3::new(h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], h[8]);
        let td_inv = td
            .try_inverse()
            .ok_or_else(|| Error::DegenerateGeometry("singular target normalization".into()))?;
        let m = td_inv * hn * ts;
        if m[(2, 2)].abs() < 1e-300 {
            return Err(Error::DegenerateGeometry("homography maps a point to infinity".into()));
        }
        Ok(Homography(m / m[(2, 2)]))
    }
}

fn check_general_position(p: &[[f64; 2]; 4], side: &str) -> Result<()> {
    let scale = p
        .iter()
        .flat_map(|a| p.iter().map(move |b| (a[0] - b[0]).hypot(a[1] - b[1])))
        .fold(0.0, f64::max);
    for (i, j, k) in [(0, 1, 2), (0, 1, 3), (0, 2, 3), (1, 2, 3)] {
        let cross = (p[j][0] - p[i][0]) * (p[k][1] - p[i][1]) - (p[j][1] - p[i][1]) * (p[k][0] - p[i][0]);
        if !(cross.abs() > 1e-9 * scale * scale) {
            return Err(Error::domain(format!(
                "{side} points {i}, {j}, {k} are collinear; a homography needs four points in general position"
            )));
        }
    }
    Ok(())
}

/// Similarity moving the centroid to the origin with mean distance √2.
fn normalizer(p: &[[f64; 2]; 4]) -> (Matrix3<f64>, [[f64; 2]; 4]) {
    let cx = p.iter().map(|q| q[0]).sum::<f64>() / 4.0;
    let cy = p.iter().map(|q| q[1]).sum::<f64>() / 4.0;
    let mean = p.iter().map(|q| (q[0] - cx).hypot(q[1] - cy)).sum::<f64>() / 4.0;
    let s = std::f64::consts::SQRT_2 / mean;
    let t = Matrix3::new(s, 0.0, -s * cx, 0.0, s, -s * cy, 0.0, 0.0, 1.0);
    (t, p.map(|q| [s * (q[0] - cx), s * (q[1] - cy)]))
}

fn bilinear(img: &OrthoImage, x: f64, y: f64) -> Option<[f32; 3]> {
    let max_x = (img.width - 1) as f64;
    let max_y = (img.height - 1) as f64;
    // round-off from the inverse map must not turn border pixels into holes
    const SNAP: f64 = 1e-6;
    let x = if x < 0.0 && x > -SNAP {
        0.0
    } else if x > max_x && x < max_x + SNAP {
        max_x
    } else {
        x
    };
    let y = if y < 0.0 && y > -SNAP {
        0.0
    } else if y > max_y && y < max_y + SNAP {
        max_y
    } else {
        y
    };
    if !(x >= 0.0 && y >= 0.0 && x <= max_x && y <= max_y) {
        return None;
    }
    let x0 = (x.floor() as usize).min(img.width.saturating_sub(2));
    let y0 = (y.floor() as usize).min(img.height.saturating_sub(2));
    let x1 = (x0 + 1).min(img.width - 1);
    let y1 = (y0 + 1).min(img.height - 1);
    let (fx, fy) = (x - x0 as f64, y - y0 as f64);
    let taps = [
        (x0, y0, (1.0 - fx) * (1.0 - fy)),
        (x1, y0, fx * (1.0 - fy)),
        (x0, y1, (1.0 - fx) * fy),
        (x1, y1, fx * fy),
    ];
    let mut out = [0.0f64; 3];
    for (tx, ty, w) in taps {
        if w == 0.0 {
            continue;
        }
        let i = img.index(tx, ty);
        if img.hole_mask[i] {
            return None;
        }
        for c in 0..3 {
            out[c] += w * img.rgb[i][c] as f64;
        }
    }
    Some(out.map(|v| v as f32))
}

/// Orthorectifies a photo by the ground-plane homography implied by four
/// correspondences, producing a `width × height` image. Output pixels
/// that map outside the source footprint are holes.
pub fn perspective_fallback(
    image: &OrthoImage,
    corr: &[Correspondence; 4],
    width: usize,
    height: usize,
) -> Result<OrthoImage> {
    if image.is_empty() || width == 0 || height == 0 {
        return Err(Error::domain("perspective fallback needs non-empty images"));
    }
    let back = Homography::from_correspondences(corr)?
        .inverse()
        .ok_or_else(|| Error::DegenerateGeometry("homography is singular".into()))?;
    let mut out = OrthoImage::filled(width, height, [0.0; 3]);
    for y in 0..height {
        for x in 0..width {
            let [sx, sy] = back.apply([x as f64, y as f64]);
            let i = out.index(x, y);
            match bilinear(image, sx, sy) {
                Some(c) => out.rgb[i] = c,
                None => out.hole_mask[i] = true,
            }
        }
    }
    Ok(out)
}

/// Reads exactly four `sx,sy,tu,tv` rows. A leading header row is skipped.
pub fn load_correspondences(path: impl AsRef<Path>) -> Result<[Correspondence; 4]> {
    let path = path.as_ref();
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::csv(path, e))?;
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::csv(path, e))?;
        let line = rec.position().map_or(i + 1, |p| p.line() as usize);
        let values: Vec<f64> = match rec.iter().map(str::parse).collect() {
            Ok(v) => v,
            Err(_) if i == 0 => continue,
            Err(_) => {
                return Err(Error::Parse {
                    line,
                    message: "expected four numbers `sx,sy,tu,tv`".into(),
                });
            }
        };
        if values.len() != 4 || values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Parse {
                line,
                message: "expected four finite numbers `sx,sy,tu,tv`".into(),
            });
        }
        rows.push(Correspondence {
            source: [values[0], values[1]],
            target: [values[2], values[3]],
        });
    }
    rows.try_into()
        .map_err(|rows: Vec<_>| Error::Schema(format!("need exactly 4 correspondences, found {}", rows.len())))
}
