//! Two-pass layered splatting on the supersampled grid.
//!
//! Pass 1 records, per pixel, the highest roof-candidate height whose splat
//! covers it. Pass 2 accumulates roof candidates inside the top band with
//! exponential height weights, and ground-band samples unweighted, both
//! through a truncated, renormalized Gaussian disc. Pixels dominated by
//! candidates below their top band lie on walls and are cleared.
//!
//! Work is split into horizontal bands of rows. Each band owns its pixels
//! and visits the samples that reach it in input order, so the result is
//! identical whether bands run sequentially or in parallel.

use super::{Georef, HeightNormalization, RasterConfig, Resolution};
use crate::exec;
use crate::plane::PlanePointSet;

const BAND_ROWS: usize = 32;

/// Per-pixel accumulators.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AccumPixel {
    /// Weighted sum of roof colors; divide by `roof_weight`.
    pub roof_rgb: [f64; 3],
    pub roof_weight: f64,
    pub roof_hits: u32,
    /// Roof candidates covering the pixel from below the top band.
    pub facade_hits: u32,
    /// Highest roof-candidate height covering the pixel, normalized units.
    pub h_max: f64,
    pub ground_rgb: [f64; 3],
    pub ground_weight: f64,
    pub ground_hits: u32,
}

impl AccumPixel {
    pub const EMPTY: AccumPixel = AccumPixel {
        roof_rgb: [0.0; 3],
        roof_weight: 0.0,
        roof_hits: 0,
        facade_hits: 0,
        h_max: f64::NEG_INFINITY,
        ground_rgb: [0.0; 3],
        ground_weight: 0.0,
        ground_hits: 0,
    };

    pub fn roof_color(&self) -> Option<[f64; 3]> {
        (self.roof_weight > 0.0).then(|| self.roof_rgb.map(|c| c / self.roof_weight))
    }

    pub fn ground_color(&self) -> Option<[f64; 3]> {
        (self.ground_weight > 0.0).then(|| self.ground_rgb.map(|c| c / self.ground_weight))
    }
}

impl Default for AccumPixel {
    fn default() -> Self {
        Self::EMPTY
    }
}

/// Supersampled accumulation grid.
#[derive(Debug, Clone, PartialEq)]
pub struct OrthoFrameBuffer {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<AccumPixel>,
    pub georef: Georef,
    pub m_min: u32,
    pub w_sat: f64,
}

impl OrthoFrameBuffer {
    pub fn new(width: usize, height: usize, georef: Georef, m_min: u32, w_sat: f64) -> Self {
        Self {
            width,
            height,
            pixels: vec![AccumPixel::EMPTY; width * height],
            georef,
            m_min,
            w_sat,
        }
    }

    pub fn at(&self, x: usize, y: usize) -> &AccumPixel {
        &self.pixels[y * self.width + x]
    }
}

/// Roof fusion weight `exp((h - h_max) / τ)` with `τ = roof_band / 2`.
pub fn roof_weight(h: f64, h_max: f64, roof_band: f64) -> f64 {
    ((h - h_max) / (roof_band / 2.0)).exp()
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Layer {
    Roof,
    Ground,
}

#[derive(Clone, Copy)]
struct Sample {
    /// Continuous column / row position; pixel `(x, y)` has its center at `(x + 0.5, y + 0.5)`.
    fx: f64,
    gy: f64,
    /// Pixel containing the sample, as assigned by the floor rule.
    cx: usize,
    cy: usize,
    h: f64,
    color: [u8; 3],
    layer: Layer,
}

struct Splat {
    radius: f64,
    inv_two_sigma2: f64,
    width: usize,
    height: usize,
}

impl Splat {
    fn rows(&self, s: &Sample) -> (usize, usize) {
        let lo = (s.gy - 0.5 - self.radius).ceil().max(0.0) as usize;
        let hi = ((s.gy - 0.5 + self.radius).floor().max(0.0) as usize).min(self.height - 1);
        (lo.min(s.cy), hi.max(s.cy))
    }

    fn cols(&self, s: &Sample) -> (usize, usize) {
        let lo = (s.fx - 0.5 - self.radius).ceil().max(0.0) as usize;
        let hi = ((s.fx - 0.5 + self.radius).floor().max(0.0) as usize).min(self.width - 1);
        (lo.min(s.cx), hi.max(s.cx))
    }

    /// Unnormalized kernel value at pixel `(x, y)`, or `None` outside the disc.
    fn raw(&self, s: &Sample, x: usize, y: usize) -> Option<f64> {
        let dx = x as f64 + 0.5 - s.fx;
        let dy = y as f64 + 0.5 - s.gy;
        let d2 = dx * dx + dy * dy;
        (d2 <= self.radius * self.radius || (x == s.cx && y == s.cy)).then(|| (-d2 * self.inv_two_sigma2).exp())
    }

    /// Visits every footprint pixel whose row lies in `rows`, passing the
    /// normalized kernel weight.
    fn visit(&self, s: &Sample, rows: (usize, usize), mut f: impl FnMut(usize, usize, f64)) {
        let (y0, y1) = self.rows(s);
        let (x0, x1) = self.cols(s);
        let mut total = 0.0;
        for y in y0..=y1 {
            for x in x0..=x1 {
                if let Some(k) = self.raw(s, x, y) {
                    total += k;
                }
            }
        }
        for y in y0.max(rows.0)..=y1.min(rows.1) {
            for x in x0..=x1 {
                if let Some(k) = self.raw(s, x, y) {
                    f(x, y, k / total);
                }
            }
        }
    }

    fn covers(&self, s: &Sample, rows: (usize, usize), mut f: impl FnMut(usize, usize)) {
        let (y0, y1) = self.rows(s);
        let (x0, x1) = self.cols(s);
        for y in y0.max(rows.0)..=y1.min(rows.1) {
            for x in x0..=x1 {
                if self.raw(s, x, y).is_some() {
                    f(x, y);
                }
            }
        }
    }
}

/// Splats `pts` into a supersampled frame buffer sized by `res`.
///
/// Samples with `|h_norm| <= ground_band` feed the ground layer; samples
/// above the band are roof candidates; samples below it are ignored.
/// Roof accumulators of pixels with fewer than `m_min` roof hits are
/// cleared (their hit counts are kept). Wall pixels, see
/// [`RasterConfig::facade_ratio`], lose both layers and become holes.
pub fn rasterize_layers(
    pts: &PlanePointSet,
    cfg: &RasterConfig,
    res: &Resolution,
    norm: &HeightNormalization,
) -> OrthoFrameBuffer {
    let s = cfg.ssaa;
    let width = res.width * s;
    let height = res.height * s;
    let r = res.pixel_scale / s as f64;
    let georef = Georef {
        u_min: res.u_min,
        v_min: res.v_min,
        pixel_scale: r,
        full_width: width,
        full_height: height,
        crop_x: 0,
        crop_y: 0,
    };
    let mut buf = OrthoFrameBuffer::new(width, height, georef, cfg.m_min, cfg.w_sat);
    let sigma = cfg.splat_radius_px / 2.0;
    let splat = Splat {
        radius: cfg.splat_radius_px,
        inv_two_sigma2: 1.0 / (2.0 * sigma * sigma),
        width,
        height,
    };

    let samples: Vec<Sample> = pts
        .coords
        .iter()
        .zip(&pts.colors)
        .filter_map(|(c, &color)| {
            let h = norm.normalize(c[2]);
            let layer = if h.abs() <= cfg.ground_band {
                Layer::Ground
            } else if h > cfg.ground_band {
                Layer::Roof
            } else {
                return None;
            };
            let fx = (c[0] - res.u_min) / r;
            let fv = (c[1] - res.v_min) / r;
            let cx = (fx.floor() as usize).min(width - 1);
            let cy = height - 1 - (fv.floor() as usize).min(height - 1);
            Some(Sample {
                fx,
                gy: height as f64 - fv,
                cx,
                cy,
                h,
                color,
                layer,
            })
        })
        .collect();

    let bands = height.div_ceil(BAND_ROWS);
    let mut buckets: Vec<Vec<u32>> = vec![Vec::new(); bands];
    for (i, smp) in samples.iter().enumerate() {
        let (y0, y1) = splat.rows(smp);
        for bucket in &mut buckets[y0 / BAND_ROWS..=y1 / BAND_ROWS] {
            bucket.push(i as u32);
        }
    }

    let roof_band = norm.roof_band;
    let mut chunks: Vec<&mut [AccumPixel]> = buf.pixels.chunks_mut(BAND_ROWS * width).collect();
    exec::for_each_mut(cfg.parallelism, &mut chunks, |band, pixels| {
        let row0 = band * BAND_ROWS;
        let rows = (row0, row0 + pixels.len() / width - 1);
        let at = |x: usize, y: usize| (y - row0) * width + x;
        let bucket = &buckets[band];

        for smp in bucket.iter().map(|&i| &samples[i as usize]) {
            if smp.layer == Layer::Roof {
                splat.covers(smp, rows, |x, y| {
                    let p = &mut pixels[at(x, y)];
                    p.h_max = p.h_max.max(smp.h);
                });
            }
        }
        for smp in bucket.iter().map(|&i| &samples[i as usize]) {
            let color = smp.color.map(f64::from);
            splat.visit(smp, rows, |x, y, k| {
                let p = &mut pixels[at(x, y)];
                match smp.layer {
                    Layer::Roof => {
                        if smp.h >= p.h_max - roof_band {
                            let w = roof_weight(smp.h, p.h_max, roof_band) * k;
                            for c in 0..3 {
                                p.roof_rgb[c] += w * color[c];
                            }
                            p.roof_weight += w;
                            p.roof_hits += 1;
                        } else {
                            p.facade_hits += 1;
                        }
                    }
                    Layer::Ground => {
                        for c in 0..3 {
                            p.ground_rgb[c] += k * color[c];
                        }
                        p.ground_weight += k;
                        p.ground_hits += 1;
                    }
                }
            });
        }
        for p in pixels.iter_mut() {
            if cfg.facade_ratio > 0.0 && f64::from(p.facade_hits) > cfg.facade_ratio * f64::from(p.roof_hits) {
                *p = AccumPixel {
                    facade_hits: p.facade_hits,
                    ..AccumPixel::EMPTY
                };
            }
            if p.roof_hits < cfg.m_min {
                p.roof_rgb = [0.0; 3];
                p.roof_weight = 0.0;
            }
        }
    });
    buf
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exec::Parallelism;
    use crate::rng::stream_rng;
    use rand::Rng;

    #[test]
    fn weight_at_band_top_and_bottom() {
        assert_eq!(roof_weight(3.7, 3.7, 0.4), 1.0);
        let w = roof_weight(3.7 - 0.4, 3.7, 0.4);
        assert!((w - (-2.0f64).exp()).abs() < 1e-12);
        assert!((w - 0.1353).abs() < 1e-4);
    }

    fn grid(width: usize, height: usize, r: f64) -> Resolution {
        Resolution {
            pixel_scale: r,
            width,
            height,
            u_min: 0.0,
            v_min: 0.0,
            ground_area: 0.0,
            ground_count: 0,
            used_full_extent: false,
        }
    }

    const NORM: HeightNormalization = HeightNormalization {
        scale: 1.0,
        roof_band: 0.2,
    };

    fn cfg() -> RasterConfig {
        RasterConfig {
            ssaa: 1,
            m_min: 1,
            ..Default::default()
        }
    }

    #[test]
    fn centered_sample_gets_unit_roof_weight_at_its_pixel() {
        let pts = PlanePointSet {
            coords: vec![[2.5, 2.5, 1.0]],
            colors: vec![[10, 20, 30]],
        };
        let buf = rasterize_layers(&pts, &cfg(), &grid(5, 5, 1.0), &NORM);
        // v = 2.5 -> row 5 - 1 - 2 = 2
        let p = buf.at(2, 2);
        assert_eq!(p.h_max, 1.0);
        assert_eq!(p.roof_hits, 1);
        assert_eq!(p.roof_color().unwrap().map(|c| c.round()), [10.0, 20.0, 30.0]);
        // normalized kernel: weights over the footprint sum to 1
        let total: f64 = buf.pixels.iter().map(|p| p.roof_weight).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn y_axis_is_flipped() {
        let pts = PlanePointSet {
            coords: vec![[0.5, 0.5, 0.0], [0.5, 9.5, 0.0]],
            colors: vec![[1, 1, 1], [2, 2, 2]],
        };
        let c = RasterConfig {
            splat_radius_px: 0.5,
            ..cfg()
        };
        let buf = rasterize_layers(&pts, &c, &grid(10, 10, 1.0), &NORM);
        assert_eq!(buf.at(0, 9).ground_color().unwrap(), [1.0; 3]);
        assert_eq!(buf.at(0, 0).ground_color().unwrap(), [2.0; 3]);
    }

    #[test]
    fn lower_sample_in_band_is_downweighted() {
        let pts = PlanePointSet {
            coords: vec![[2.5, 2.5, 1.0], [2.5, 2.5, 0.9], [2.5, 2.5, 0.5]],
            colors: vec![[200, 0, 0], [0, 200, 0], [0, 0, 200]],
        };
        let buf = rasterize_layers(&pts, &cfg(), &grid(5, 5, 1.0), &NORM);
        let p = buf.at(2, 2);
        // 0.5 lies below the band [0.8, 1.0]
        assert_eq!(p.roof_hits, 2);
        let w = (-1.0f64).exp();
        let c = p.roof_color().unwrap();
        assert!((c[0] - 200.0 / (1.0 + w)).abs() < 1e-9);
        assert!((c[1] - 200.0 * w / (1.0 + w)).abs() < 1e-9);
        assert_eq!(c[2], 0.0);
    }

    #[test]
    fn wall_columns_are_cleared() {
        // a vertical column of samples under a single roof sample
        let mut coords: Vec<[f64; 3]> = (0..20).map(|i| [2.5, 2.5, 0.3 + 0.035 * i as f64]).collect();
        coords.push([2.5, 2.5, 1.0]);
        let n = coords.len();
        let pts = PlanePointSet {
            coords,
            colors: vec![[255, 0, 255]; n],
        };
        let buf = rasterize_layers(&pts, &cfg(), &grid(5, 5, 1.0), &NORM);
        let p = buf.at(2, 2);
        assert!(p.facade_hits > 2 * p.roof_hits);
        assert_eq!(p.roof_hits, 0);
        assert_eq!(p.roof_weight, 0.0);
        assert_eq!(p.ground_weight, 0.0);

        let off = RasterConfig {
            facade_ratio: 0.0,
            ..cfg()
        };
        let buf = rasterize_layers(&pts, &off, &grid(5, 5, 1.0), &NORM);
        assert!(buf.at(2, 2).roof_weight > 0.0);
    }

    #[test]
    fn flat_roof_is_not_a_wall() {
        let pts = PlanePointSet {
            coords: vec![[2.5, 2.5, 1.0], [2.4, 2.6, 0.95], [2.6, 2.4, 0.9]],
            colors: vec![[200, 0, 0]; 3],
        };
        let buf = rasterize_layers(&pts, &cfg(), &grid(5, 5, 1.0), &NORM);
        assert_eq!(buf.at(2, 2).facade_hits, 0);
        assert_eq!(buf.at(2, 2).roof_hits, 3);
    }

    #[test]
    fn sparse_roof_pixels_are_cleared() {
        let pts = PlanePointSet {
            coords: vec![[2.5, 2.5, 1.0], [2.5, 2.5, 1.0]],
            colors: vec![[200, 0, 0]; 2],
        };
        let c = RasterConfig { m_min: 3, ..cfg() };
        let buf = rasterize_layers(&pts, &c, &grid(5, 5, 1.0), &NORM);
        let p = buf.at(2, 2);
        assert_eq!(p.roof_hits, 2);
        assert_eq!(p.roof_weight, 0.0);
    }

    #[test]
    fn weights_bounded_and_colors_convex() {
        let mut rng = stream_rng(3, 0);
        let n = 4000;
        let pts = PlanePointSet {
            coords: (0..n)
                .map(|_| {
                    [
                        rng.random_range(0.0..40.0),
                        rng.random_range(0.0..70.0),
                        rng.random_range(-0.05..1.0),
                    ]
                })
                .collect(),
            colors: (0..n).map(|_| [rng.random(), rng.random(), rng.random()]).collect(),
        };
        let c = RasterConfig { ssaa: 2, ..cfg() };
        let buf = rasterize_layers(&pts, &c, &grid(40, 70, 1.0), &NORM);
        for p in &buf.pixels {
            for col in [p.roof_color(), p.ground_color()].into_iter().flatten() {
                assert!(col.iter().all(|&v| (-1e-9..=255.0 + 1e-9).contains(&v)));
            }
            if p.roof_hits > 0 {
                // every roof contribution has weight <= kernel value <= 1
                assert!(p.roof_weight <= p.roof_hits as f64 + 1e-12);
            }
        }
        let mut seq = c;
        seq.parallelism = Parallelism::Sequential;
        assert_eq!(rasterize_layers(&pts, &seq, &grid(40, 70, 1.0), &NORM), buf);
    }
}
