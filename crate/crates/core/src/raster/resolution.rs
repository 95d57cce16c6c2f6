use super::RasterConfig;
use crate::error::{Error, Result};
use crate::plane::PlanePointSet;

/// Dimensionless height scale shared by the ground and roof bands.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeightNormalization {
    /// `h_norm = h / scale`.
    pub scale: f64,
    /// Roof band width Δ in normalized units; τ = Δ/2.
    pub roof_band: f64,
}

impl HeightNormalization {
    pub fn normalize(&self, h: f64) -> f64 {
        h / self.scale
    }

    pub fn tau(&self) -> f64 {
        self.roof_band / 2.0
    }
}

/// Nearest-rank percentile of an unsorted sample (`q` in `[0, 1]`).
pub(crate) fn percentile(values: &mut [f64], q: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let k = ((values.len() - 1) as f64 * q).round() as usize;
    let (_, v, _) = values.select_nth_unstable_by(k, f64::total_cmp);
    Some(*v)
}

pub(crate) fn uv_bounds(pts: &PlanePointSet) -> ([f64; 2], [f64; 2]) {
    pts.coords
        .iter()
        .fold(([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]), |(lo, hi), c| {
            ([lo[0].min(c[0]), lo[1].min(c[1])], [hi[0].max(c[0]), hi[1].max(c[1])])
        })
}

/// Scale heights by the 98th percentile of positive heights (floored at
/// `min_height_scale_frac` of the in-plane diagonal), and size the roof
/// band from the p05..p95 normalized range.
pub fn normalize_heights(pts: &PlanePointSet, cfg: &RasterConfig) -> Result<HeightNormalization> {
    if pts.is_empty() {
        return Err(Error::domain("cannot normalize heights of an empty point set"));
    }
    let (lo, hi) = uv_bounds(pts);
    let diag = ((hi[0] - lo[0]).powi(2) + (hi[1] - lo[1]).powi(2)).sqrt();
    let mut positive: Vec<f64> = pts.heights().filter(|&h| h > 0.0).collect();
    let p98 = percentile(&mut positive, 0.98).unwrap_or(0.0);
    let floor = cfg.min_height_scale_frac * diag;
    let mut scale = p98.max(floor);
    if !(scale > 0.0) {
        scale = 1.0;
    }
    let mut normalized: Vec<f64> = pts.heights().map(|h| h / scale).collect();
    let p95 = percentile(&mut normalized, 0.95).unwrap();
    let p05 = percentile(&mut normalized, 0.05).unwrap();
    let roof_band = (cfg.roof_band_frac * (p95 - p05)).max(1e-6);
    Ok(HeightNormalization { scale, roof_band })
}

/// Outcome of the adaptive resolution choice.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Resolution {
    /// Base-grid units per pixel.
    pub pixel_scale: f64,
    pub width: usize,
    pub height: usize,
    pub u_min: f64,
    pub v_min: f64,
    /// Ground-band area and count that drove the choice.
    pub ground_area: f64,
    pub ground_count: usize,
    /// Set when the ground band was empty or flat and the whole cloud was used.
    pub used_full_extent: bool,
}

/// `clip(sqrt(area / (count / rho)), r_min, r_max)`.
pub fn pixel_scale_for(area: f64, count: usize, cfg: &RasterConfig) -> f64 {
    let target_pixels = count as f64 / cfg.rho;
    (area / target_pixels).sqrt().clamp(cfg.r_min, cfg.r_max)
}

/// Grid covering `extent` at scale `r`, coarsened until it fits `p_max`.
/// Returns the possibly enlarged scale and the dimensions.
pub fn grid_size(extent: [f64; 2], mut r: f64, p_max: u64) -> (f64, usize, usize) {
    let dims = |r: f64| ((extent[0] / r).floor() as u64 + 1, (extent[1] / r).floor() as u64 + 1);
    let (mut w, mut h) = dims(r);
    while w.saturating_mul(h) > p_max {
        let grow = ((w * h) as f64 / p_max as f64).sqrt();
        r *= grow.max(1.0 + 1e-12);
        (w, h) = dims(r);
    }
    (r, w as usize, h as usize)
}

/// Base pixel scale and grid for `pts`, following the ground-band rule.
pub fn choose_resolution(pts: &PlanePointSet, cfg: &RasterConfig, norm: &HeightNormalization) -> Result<Resolution> {
    if pts.is_empty() {
        return Err(Error::domain("cannot choose a resolution for an empty point set"));
    }
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    let mut count = 0usize;
    for c in &pts.coords {
        if norm.normalize(c[2]).abs() <= cfg.ground_band {
            count += 1;
            for k in 0..2 {
                lo[k] = lo[k].min(c[k]);
                hi[k] = hi[k].max(c[k]);
            }
        }
    }
    let mut area = if count > 0 {
        (hi[0] - lo[0]) * (hi[1] - lo[1])
    } else {
        0.0
    };
    let (full_lo, full_hi) = uv_bounds(pts);
    let used_full_extent = !(area > 0.0);
    if used_full_extent {
        log::warn!("ground band is empty or has zero area; sizing pixels from the full cloud extent");
        area = (full_hi[0] - full_lo[0]) * (full_hi[1] - full_lo[1]);
        count = pts.len();
    }
    let r = if area > 0.0 {
        pixel_scale_for(area, count, cfg)
    } else {
        cfg.r_max
    };
    let extent = [full_hi[0] - full_lo[0], full_hi[1] - full_lo[1]];
    let (pixel_scale, width, height) = grid_size(extent, r, cfg.p_max);
    Ok(Resolution {
        pixel_scale,
        width,
        height,
        u_min: full_lo[0],
        v_min: full_lo[1],
        ground_area: area,
        ground_count: count,
        used_full_extent,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unclamped_scale() {
        let r = pixel_scale_for(100.0, 1_000_000, &RasterConfig::default());
        assert!((r - 0.02).abs() < 1e-15);
    }

    #[test]
    fn clamp_floor_and_ceiling() {
        let cfg = RasterConfig::default();
        // sqrt(1 / (4e6/4)) = 0.001
        assert_eq!(pixel_scale_for(1.0, 4_000_000, &cfg), 0.02);
        assert_eq!(pixel_scale_for(1e6, 4, &cfg), 0.5);
    }

    #[test]
    fn pixel_budget_enforced_within_one_line() {
        let p_max = 16_777_216;
        let (r, w, h) = grid_size([1000.0, 1000.0], 0.02, p_max);
        assert!((w * h) as u64 <= p_max);
        // one more row and column would overflow the budget
        assert!(((w + 1) * (h + 1)) as u64 > p_max);
        assert!(r > 0.02);
        assert_eq!((w, h), (4096, 4096));
    }

    #[test]
    fn percentile_nearest_rank() {
        let mut v: Vec<f64> = (0..101).map(f64::from).collect();
        v.reverse();
        assert_eq!(percentile(&mut v, 0.98), Some(98.0));
        assert_eq!(percentile(&mut v, 0.0), Some(0.0));
        assert_eq!(percentile(&mut [], 0.5), None);
    }

    fn flat(n: usize) -> PlanePointSet {
        PlanePointSet {
            coords: (0..n)
                .map(|i| [(i % 100) as f64 * 0.1, (i / 100) as f64 * 0.1, 0.0])
                .collect(),
            colors: vec![[0; 3]; n],
        }
    }

    #[test]
    fn flat_scene_uses_diagonal_floor() {
        let pts = flat(10_000);
        let cfg = RasterConfig::default();
        let norm = normalize_heights(&pts, &cfg).unwrap();
        let diag = (9.9f64 * 9.9 * 2.0).sqrt();
        assert!((norm.scale - 0.01 * diag).abs() < 1e-12);
        let res = choose_resolution(&pts, &cfg, &norm).unwrap();
        assert!(!res.used_full_extent);
        assert_eq!(res.ground_count, 10_000);
        // 98 cm^2 over 2500 target pixels
        assert!((res.pixel_scale - (9.9f64 * 9.9 / 2500.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn degenerate_ground_band_falls_back_to_full_extent() {
        let pts = PlanePointSet {
            coords: vec![[0.0, 0.0, 0.0], [5.0, 0.0, 0.0], [0.0, 5.0, 10.0], [5.0, 5.0, 10.0]],
            colors: vec![[0; 3]; 4],
        };
        let cfg = RasterConfig::default();
        let norm = normalize_heights(&pts, &cfg).unwrap();
        let res = choose_resolution(&pts, &cfg, &norm).unwrap();
        assert!(res.used_full_extent);
        assert_eq!(res.ground_count, 4);
    }
}
