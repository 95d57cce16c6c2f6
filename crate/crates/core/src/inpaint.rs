//! Hole filling and global color harmonization for rendered orthophotos.
//!
//! Filling is fast-marching propagation: hole pixels are visited in order
//! of their distance to the known region, and each takes a weighted mean
//! of already-known pixels within a radius. Weights favor close pixels,
//! pixels along the marching direction, and pixels on a similar distance
//! level set. All weights are positive, so filled values never leave the
//! range of the known values around them.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};
use crate::raster::OrthoImage;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HoleMask {
    pub width: usize,
    pub height: usize,
    pub flags: Vec<bool>,
    /// Total dilation applied so far, in pixels.
    pub dilation: usize,
}

impl HoleMask {
    pub fn from_image(img: &OrthoImage) -> Self {
        Self {
            width: img.width,
            height: img.height,
            flags: img.hole_mask.clone(),
            dilation: 0,
        }
    }

    pub fn count(&self) -> usize {
        self.flags.iter().filter(|&&f| f).count()
    }

    /// Grows the mask by `px` pixels (square structuring element).
    pub fn dilate(&self, px: usize) -> Self {
        if px == 0 {
            return self.clone();
        }
        let (w, h) = (self.width, self.height);
        // separable max filter: rows, then columns
        let mut rows = vec![false; w * h];
        for y in 0..h {
            for x in 0..w {
                let lo = x.saturating_sub(px);
                let hi = (x + px).min(w - 1);
                rows[y * w + x] = self.flags[y * w + lo..=y * w + hi].iter().any(|&f| f);
            }
        }
        let mut flags = vec![false; w * h];
        for y in 0..h {
            for x in 0..w {
                let lo = y.saturating_sub(px);
                let hi = (y + px).min(h - 1);
                flags[y * w + x] = (lo..=hi).any(|yy| rows[yy * w + x]);
            }
        }
        Self {
            width: w,
            height: h,
            flags,
            dilation: self.dilation + px,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum State {
    Known,
    Band,
    Inside,
}

const FAR: f64 = 1e6;

struct March<'a> {
    w: usize,
    h: usize,
    state: Vec<State>,
    t: Vec<f64>,
    rgb: &'a mut [[f32; 3]],
}

impl March<'_> {
    fn solve(&self, a: (usize, usize), b: (usize, usize)) -> f64 {
        let ia = a.1 * self.w + a.0;
        let ib = b.1 * self.w + b.0;
        let (ta, tb) = (self.t[ia], self.t[ib]);
        let (ka, kb) = (self.state[ia] != State::Inside, self.state[ib] != State::Inside);
        match (ka, kb) {
            (true, true) => {
                let d = 2.0 - (ta - tb).powi(2);
                if d > 0.0 {
                    let r = d.sqrt();
                    let s = (ta + tb - r) / 2.0;
                    if s >= ta && s >= tb {
                        return s;
                    }
                    let s = s + r;
                    if s >= ta && s >= tb {
                        return s;
                    }
                }
                FAR
            }
            (true, false) => 1.0 + ta,
            (false, true) => 1.0 + tb,
            (false, false) => FAR,
        }
    }

    fn arrival_time(&self, x: usize, y: usize) -> f64 {
        let mut best = FAR;
        let xs = [x.checked_sub(1), (x + 1 < self.w).then_some(x + 1)];
        let ys = [y.checked_sub(1), (y + 1 < self.h).then_some(y + 1)];
        for nx in xs.into_iter().flatten() {
            for ny in ys.into_iter().flatten() {
                best = best.min(self.solve((nx, y), (x, ny)));
            }
        }
        // a pixel with only one usable axis still gets 1 + T(neighbor)
        for nx in xs.into_iter().flatten() {
            let i = y * self.w + nx;
            if self.state[i] != State::Inside {
                best = best.min(1.0 + self.t[i]);
            }
        }
        for ny in ys.into_iter().flatten() {
            let i = ny * self.w + x;
            if self.state[i] != State::Inside {
                best = best.min(1.0 + self.t[i]);
            }
        }
        best
    }

    fn gradient(&self, x: usize, y: usize) -> (f64, f64) {
        let t0 = self.t[y * self.w + x];
        let axis = |lo: Option<usize>, hi: Option<usize>, idx: &dyn Fn(usize) -> usize| -> f64 {
            let val = |p: Option<usize>| {
                p.map(idx)
                    .filter(|&i| self.state[i] != State::Inside)
                    .map(|i| self.t[i])
            };
            match (val(lo), val(hi)) {
                (Some(a), Some(b)) => (b - a) / 2.0,
                (Some(a), None) => t0 - a,
                (None, Some(b)) => b - t0,
                (None, None) => 0.0,
            }
        };
        let w = self.w;
        let gx = axis(x.checked_sub(1), (x + 1 < self.w).then_some(x + 1), &|nx| y * w + nx);
        let gy = axis(y.checked_sub(1), (y + 1 < self.h).then_some(y + 1), &|ny| ny * w + x);
        (gx, gy)
    }

    fn fill(&mut self, x: usize, y: usize, radius: usize) {
        let i = y * self.w + x;
        let (gx, gy) = self.gradient(x, y);
        let gnorm = gx.hypot(gy);
        let r2 = (radius * radius) as f64;
        let mut acc = [0.0f64; 3];
        let mut total = 0.0;
        for ny in y.saturating_sub(radius)..=(y + radius).min(self.h - 1) {
            for nx in x.saturating_sub(radius)..=(x + radius).min(self.w - 1) {
                let j = ny * self.w + nx;
                if self.state[j] != State::Known || j == i {
                    continue;
                }
                let dx = x as f64 - nx as f64;
                let dy = y as f64 - ny as f64;
                let d2 = dx * dx + dy * dy;
                if d2 > r2 {
                    continue;
                }
                let dst = 1.0 / d2;
                let lev = 1.0 / (1.0 + (self.t[j] - self.t[i]).abs());
                let mut dir = if gnorm > 0.0 {
                    (dx * gx + dy * gy).abs() / (d2.sqrt() * gnorm)
                } else {
                    1.0
                };
                if dir < 0.01 {
                    dir = 0.01;
                }
                let wgt = dst * lev * dir;
                for c in 0..3 {
                    acc[c] += wgt * self.rgb[j][c] as f64;
                }
                total += wgt;
            }
        }
        if total > 0.0 {
            self.rgb[i] = acc.map(|v| (v / total) as f32);
        }
    }
}

/// Fills every pixel flagged in `mask`; other pixels are left untouched.
/// The result has an empty hole mask.
pub fn inpaint(img: &OrthoImage, mask: &HoleMask, radius: usize) -> Result<OrthoImage> {
    if (mask.width, mask.height) != (img.width, img.height) {
        return Err(Error::domain("hole mask dimensions differ from the image"));
    }
    if radius < 1 {
        return Err(Error::domain("inpainting radius must be at least 1"));
    }
    let mut out = img.clone();
    out.hole_mask = vec![false; img.len()];
    let holes = mask.count();
    if holes == 0 {
        return Ok(out);
    }
    if holes == img.len() {
        return Err(Error::domain("every pixel is a hole; nothing to inpaint from"));
    }
    let (w, h) = (img.width, img.height);
    let mut m = March {
        w,
        h,
        state: mask
            .flags
            .iter()
            .map(|&f| if f { State::Inside } else { State::Known })
            .collect(),
        t: mask.flags.iter().map(|&f| if f { FAR } else { 0.0 }).collect(),
        rgb: &mut out.rgb,
    };
    let mut heap = BinaryHeap::new();
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if m.state[i] != State::Known {
                continue;
            }
            let touches_hole = [(0, 1), (2, 1), (1, 0), (1, 2)].iter().any(|&(dx, dy)| {
                let (nx, ny) = ((x + dx).wrapping_sub(1), (y + dy).wrapping_sub(1));
                nx < w && ny < h && m.state[ny * w + nx] == State::Inside
            });
            if touches_hole {
                m.state[i] = State::Band;
                heap.push(Reverse((0u64, i)));
            }
        }
    }
    while let Some(Reverse((_, i))) = heap.pop() {
        if m.state[i] == State::Known {
            continue;
        }
        m.state[i] = State::Known;
        let (x, y) = (i % w, i / w);
        for (dx, dy) in [(0usize, 1usize), (2, 1), (1, 0), (1, 2)] {
            let (nx, ny) = ((x + dx).wrapping_sub(1), (y + dy).wrapping_sub(1));
            if nx >= w || ny >= h {
                continue;
            }
            let j = ny * w + nx;
            if m.state[j] != State::Inside {
                continue;
            }
            m.t[j] = m.arrival_time(nx, ny);
            m.fill(nx, ny, radius);
            m.state[j] = State::Band;
            heap.push(Reverse((m.t[j].to_bits(), j)));
        }
    }
    Ok(out)
}

/// Matches each channel's mean and standard deviation over non-hole pixels
/// to `reference`. With no reference the image is returned unchanged. A
/// channel with zero spread is only shifted to the reference mean.
pub fn harmonize(img: &OrthoImage, reference: Option<&OrthoImage>) -> Result<OrthoImage> {
    let Some(reference) = reference else {
        return Ok(img.clone());
    };
    let (src, dst) = match (channel_stats(img), channel_stats(reference)) {
        (Some(s), Some(d)) => (s, d),
        _ => return Err(Error::domain("harmonization needs non-empty images with known pixels")),
    };
    let mut out = img.clone();
    let mut map = [(1.0, 0.0); 3];
    for c in 0..3 {
        let (mu_s, sd_s) = src[c];
        let (mu_r, sd_r) = dst[c];
        let gain = if sd_s > 0.0 {
            sd_r / sd_s
        } else {
            log::warn!("channel {c} has zero variance; matching its mean only");
            1.0
        };
        map[c] = (gain, mu_r - gain * mu_s);
    }
    for (p, &hole) in out.rgb.iter_mut().zip(&img.hole_mask) {
        if hole {
            continue;
        }
        for c in 0..3 {
            let (gain, bias) = map[c];
            p[c] = (gain * p[c] as f64 + bias).clamp(0.0, 255.0) as f32;
        }
    }
    Ok(out)
}

fn channel_stats(img: &OrthoImage) -> Option<[(f64, f64); 3]> {
    let mut n = 0.0;
    let mut sum = [0.0f64; 3];
    for (p, &hole) in img.rgb.iter().zip(&img.hole_mask) {
        if !hole {
            n += 1.0;
            for c in 0..3 {
                sum[c] += p[c] as f64;
            }
        }
    }
    if n == 0.0 {
        return None;
    }
    let mean = sum.map(|s| s / n);
    let mut var = [0.0f64; 3];
    for (p, &hole) in img.rgb.iter().zip(&img.hole_mask) {
        if !hole {
            for c in 0..3 {
                var[c] += (p[c] as f64 - mean[c]).powi(2);
            }
        }
    }
    Some([0, 1, 2].map(|c| (mean[c], (var[c] / n).sqrt())))
}
