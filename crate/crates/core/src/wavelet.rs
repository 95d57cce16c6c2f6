//! Stationary (undecimated, à trous) wavelet transform, wavelet and
//! masked image losses, uncertainty-weighted loss totals and Canny edges.

use std::f64::consts::SQRT_2;

use crate::error::{Error, Result};
use crate::raster::OrthoImage;

/// A single-channel image in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct Plane {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl Plane {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::domain(format!(
                "plane data has {} samples, expected {}x{}",
                data.len(),
                width,
                height
            )));
        }
        Ok(Self { width, height, data })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self::constant(width, height, 0.0)
    }

    pub fn constant(width: usize, height: usize, value: f64) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    /// Periodic shift: output(x, y) = input(x - dx, y - dy).
    pub fn circshift(&self, dx: isize, dy: isize) -> Self {
        let (w, h) = (self.width as isize, self.height as isize);
        let mut out = Self::zeros(self.width, self.height);
        for y in 0..h {
            for x in 0..w {
                let sx = (x - dx).rem_euclid(w);
                let sy = (y - dy).rem_euclid(h);
                out.data[(y * w + x) as usize] = self.data[(sy * w + sx) as usize];
            }
        }
        out
    }
}

/// Splits an RGB image into three channel planes.
pub fn channels(img: &OrthoImage) -> Vec<Plane> {
    (0..3)
        .map(|c| Plane {
            width: img.width,
            height: img.height,
            data: img.rgb.iter().map(|p| p[c] as f64).collect(),
        })
        .collect()
}

pub fn luminance(img: &OrthoImage) -> Plane {
    Plane {
        width: img.width,
        height: img.height,
        data: img
            .rgb
            .iter()
            .map(|p| 0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64)
            .collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WaveletFilter {
    #[default]
    Haar,
    Db2,
}

impl WaveletFilter {
    pub fn parse(name: &str) -> Result<Self> {
        match name.to_ascii_lowercase().as_str() {
            "haar" => Ok(Self::Haar),
            "db2" => Ok(Self::Db2),
            other => Err(Error::domain(format!("unknown wavelet filter {other:?}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Haar => "haar",
            Self::Db2 => "db2",
        }
    }

    /// Low- and high-pass analysis taps, scaled so the low-pass sums to 1.
    pub fn taps(self) -> (Vec<f64>, Vec<f64>) {
        let lo: Vec<f64> = match self {
            Self::Haar => vec![0.5, 0.5],
            Self::Db2 => {
                let s3 = 3f64.sqrt();
                [1.0 + s3, 3.0 + s3, 3.0 - s3, 1.0 - s3]
                    .iter()
                    .map(|c| c / (4.0 * SQRT_2) / SQRT_2)
                    .collect()
            }
        };
        let n = lo.len();
        let hi = (0..n)
            .map(|k| if k % 2 == 0 { lo[n - 1 - k] } else { -lo[n - 1 - k] })
            .collect();
        (lo, hi)
    }

    /// Spatial extent of the dilated filter at `level` (1-based).
    pub fn support(self, level: usize) -> usize {
        let n = self.taps().0.len();
        (n - 1) * (1 << (level - 1)) + 1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetailLevel {
    pub horizontal: Plane,
    pub vertical: Plane,
    pub diagonal: Plane,
}

impl DetailLevel {
    pub fn subbands(&self) -> [&Plane; 3] {
        [&self.horizontal, &self.vertical, &self.diagonal]
    }
}

/// Undecimated decomposition of one channel. Boundaries are periodic.
#[derive(Debug, Clone, PartialEq)]
pub struct SwtPyramid {
    pub filter: WaveletFilter,
    /// `details[j - 1]` holds level j.
    pub details: Vec<DetailLevel>,
    pub approximation: Plane,
}

impl SwtPyramid {
    pub fn levels(&self) -> usize {
        self.details.len()
    }
}

#[derive(Clone, Copy)]
enum Axis {
    X,
    Y,
}

/// Periodic dilated convolution along one axis. `adjoint` correlates
/// instead, which inverts the analysis step.
fn filter_axis(p: &Plane, taps: &[f64], step: usize, axis: Axis, adjoint: bool) -> Plane {
    let (w, h) = (p.width, p.height);
    let mut out = Plane::zeros(w, h);
    let n = match axis {
        Axis::X => w,
        Axis::Y => h,
    };
    let offsets: Vec<usize> = taps
        .iter()
        .enumerate()
        .map(|(k, _)| {
            let o = (k * step) % n;
            if adjoint {
                o
            } else {
                (n - o) % n
            }
        })
        .collect();
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (t, &o) in taps.iter().zip(&offsets) {
                let v = match axis {
                    Axis::X => p.data[y * w + (x + o) % w],
                    Axis::Y => p.data[((y + o) % h) * w + x],
                };
                acc += t * v;
            }
            out.data[y * w + x] = acc;
        }
    }
    out
}

fn check_levels(w: usize, h: usize, levels: usize, filter: WaveletFilter) -> Result<()> {
    if levels < 1 {
        return Err(Error::domain("wavelet transform needs at least one level"));
    }
    if levels >= usize::BITS as usize - 1 {
        return Err(Error::domain("too many wavelet levels"));
    }
    let need = (1usize << levels).max(filter.support(levels));
    if w < need || h < need {
        return Err(Error::domain(format!(
            "{w}x{h} image is smaller than the {need}-pixel support needed for {levels} {} levels",
            filter.name()
        )));
    }
    Ok(())
}

pub fn swt_forward(img: &Plane, levels: usize, filter: WaveletFilter) -> Result<SwtPyramid> {
    check_levels(img.width, img.height, levels, filter)?;
    let (lo, hi) = filter.taps();
    let mut approx = img.clone();
    let mut details = Vec::with_capacity(levels);
    for j in 1..=levels {
        let step = 1 << (j - 1);
        let lx = filter_axis(&approx, &lo, step, Axis::X, false);
        let hx = filter_axis(&approx, &hi, step, Axis::X, false);
        details.push(DetailLevel {
            horizontal: filter_axis(&lx, &hi, step, Axis::Y, false),
            vertical: filter_axis(&hx, &lo, step, Axis::Y, false),
            diagonal: filter_axis(&hx, &hi, step, Axis::Y, false),
        });
        approx = filter_axis(&lx, &lo, step, Axis::Y, false);
    }
    Ok(SwtPyramid {
        filter,
        details,
        approximation: approx,
    })
}

pub fn swt_inverse(pyr: &SwtPyramid) -> Plane {
    let (lo, hi) = pyr.filter.taps();
    let mut approx = pyr.approximation.clone();
    for (j, d) in pyr.details.iter().enumerate().rev() {
        let step = 1 << j;
        let synth = |p: &Plane, fy: &[f64], fx: &[f64]| {
            filter_axis(&filter_axis(p, fy, step, Axis::Y, true), fx, step, Axis::X, true)
        };
        let parts = [
            synth(&approx, &lo, &lo),
            synth(&d.horizontal, &hi, &lo),
            synth(&d.vertical, &lo, &hi),
            synth(&d.diagonal, &hi, &hi),
        ];
        approx = Plane {
            width: approx.width,
            height: approx.height,
            data: (0..approx.data.len())
                .map(|i| parts.iter().map(|p| p.data[i]).sum())
                .collect(),
        };
    }
    approx
}

/// How a coefficient difference set is reduced to one number.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Reduction {
    #[default]
    Mean,
    Sum,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossWeights {
    pub swt_level_weights: Vec<f64>,
    pub mask_weights: Vec<f64>,
    pub uncertainty_logvars: Vec<f64>,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            swt_level_weights: vec![0.5, 0.3, 0.2],
            mask_weights: Vec::new(),
            uncertainty_logvars: Vec::new(),
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let w = &self.swt_level_weights;
        if w.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) || !w.iter().any(|&v| v > 0.0) {
            return Err(Error::domain(
                "level weights must be nonnegative with at least one positive",
            ));
        }
        if self.mask_weights.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
            return Err(Error::domain("mask weights must be nonnegative"));
        }
        if self.uncertainty_logvars.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("log-variances must be finite"));
        }
        Ok(())
    }
}

fn check_same(a: &[Plane], b: &[Plane]) -> Result<()> {
    if a.is_empty() || a.len() != b.len() {
        return Err(Error::domain("images must have the same nonzero channel count"));
    }
    if a.iter().chain(b).any(|p| p.dims() != a[0].dims()) {
        return Err(Error::domain("image dimensions differ"));
    }
    Ok(())
}

/// Weighted per-level wavelet detail discrepancy between two multichannel
/// images. The number of levels is the length of `level_weights`.
pub fn swt_loss(
    a: &[Plane],
    b: &[Plane],
    level_weights: &[f64],
    filter: WaveletFilter,
    reduction: Reduction,
) -> Result<f64> {
    check_same(a, b)?;
    LossWeights {
        swt_level_weights: level_weights.to_vec(),
        ..Default::default()
    }
    .validate()?;
    let levels = level_weights.len();
    let mut per_level = vec![0.0; levels];
    for (pa, pb) in a.iter().zip(b) {
        let (da, db) = (swt_forward(pa, levels, filter)?, swt_forward(pb, levels, filter)?);
        for (j, (la, lb)) in da.details.iter().zip(&db.details).enumerate() {
            for (sa, sb) in la.subbands().into_iter().zip(lb.subbands()) {
                per_level[j] += sa.data.iter().zip(&sb.data).map(|(x, y)| (x - y).abs()).sum::<f64>();
            }
        }
    }
    let count = (3 * a.len() * a[0].data.len()) as f64;
    Ok(per_level
        .iter()
        .zip(level_weights)
        .map(|(s, w)| match reduction {
            Reduction::Mean => w * s / count,
            Reduction::Sum => w * s,
        })
        .sum())
}

/// Per-pixel weight maps in [0, 1] with uniform dimensions.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct StructuralMaskSet {
    pub masks: Vec<Plane>,
    pub labels: Vec<String>,
}

impl StructuralMaskSet {
    pub fn push(&mut self, mask: Plane, label: impl Into<String>) -> Result<()> {
        if let Some(first) = self.masks.first() {
            if first.dims() != mask.dims() {
                return Err(Error::domain("mask dimensions differ from the rest of the set"));
            }
        }
        if mask.data.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::domain("mask values must lie in [0, 1]"));
        }
        self.masks.push(mask);
        self.labels.push(label.into());
        Ok(())
    }
}

/// Sum over masks of `lambda_m * mean |(a - b) * S_m|`, averaged over all
/// pixels and channels.
pub fn mask_loss(a: &[Plane], b: &[Plane], masks: &StructuralMaskSet, lambdas: &[f64]) -> Result<f64> {
    check_same(a, b)?;
    if lambdas.len() != masks.masks.len() {
        return Err(Error::domain(format!(
            "{} mask weights given for {} masks",
            lambdas.len(),
            masks.masks.len()
        )));
    }
    if lambdas.iter().any(|&l| !(l >= 0.0)) {
        return Err(Error::domain("mask weights must be nonnegative"));
    }
    let count = (a.len() * a[0].data.len()) as f64;
    let mut total = 0.0;
    for (mask, &lambda) in masks.masks.iter().zip(lambdas) {
        if mask.dims() != a[0].dims() {
            return Err(Error::domain("mask dimensions differ from the images"));
        }
        let mut s = 0.0;
        for (pa, pb) in a.iter().zip(b) {
            for ((x, y), m) in pa.data.iter().zip(&pb.data).zip(&mask.data) {
                s += ((x - y) * m).abs();
            }
        }
        total += lambda * s / count;
    }
    Ok(total)
}

/// `sum_i exp(-s_i) * L_i + s_i`.
pub fn uncertainty_total(losses: &[f64], logvars: &[f64]) -> Result<f64> {
    if losses.len() != logvars.len() {
        return Err(Error::domain(format!(
            "{} losses but {} log-variances",
            losses.len(),
            logvars.len()
        )));
    }
    Ok(losses.iter().zip(logvars).map(|(l, s)| (-s).exp() * l + s).sum())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CannyParams {
    pub sigma: f64,
    pub low_frac: f64,
    pub high_frac: f64,
}

impl Default for CannyParams {
    fn default() -> Self {
        Self {
            sigma: 1.4,
            low_frac: 0.1,
            high_frac: 0.3,
        }
    }
}

fn gaussian_blur(p: &Plane, sigma: f64) -> Plane {
    if sigma <= 0.0 {
        return p.clone();
    }
    let r = (3.0 * sigma).ceil() as isize;
    let mut k: Vec<f64> = (-r..=r)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    let (w, h) = (p.width as isize, p.height as isize);
    let clamp = |v: isize, n: isize| v.clamp(0, n - 1) as usize;
    let mut tmp = Plane::zeros(p.width, p.height);
    for y in 0..h {
        for x in 0..w {
            tmp.data[(y * w + x) as usize] = (-r..=r)
                .map(|i| k[(i + r) as usize] * p.data[y as usize * p.width + clamp(x + i, w)])
                .sum();
        }
    }
    let mut out = Plane::zeros(p.width, p.height);
    for y in 0..h {
        for x in 0..w {
            out.data[(y * w + x) as usize] = (-r..=r)
                .map(|i| k[(i + r) as usize] * tmp.data[clamp(y + i, h) * p.width + x as usize])
                .sum();
        }
    }
    out
}

/// Binary edge map (values 0 or 1) of a grayscale plane.
pub fn canny_edges(gray: &Plane, params: CannyParams) -> Result<Plane> {
    let CannyParams {
        sigma,
        low_frac,
        high_frac,
    } = params;
    if !(sigma >= 0.0) || !(0.0 < low_frac && low_frac < high_frac && high_frac <= 1.0) {
        return Err(Error::domain("canny needs sigma >= 0 and 0 < low < high <= 1"));
    }
    let (w, h) = gray.dims();
    let g = gaussian_blur(gray, sigma);
    let at = |x: isize, y: isize| g.data[y.clamp(0, h as isize - 1) as usize * w + x.clamp(0, w as isize - 1) as usize];
    let mut mag = vec![0.0; w * h];
    let mut dir = vec![0u8; w * h];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let gx = (at(x + 1, y - 1) + 2.0 * at(x + 1, y) + at(x + 1, y + 1))
                - (at(x - 1, y - 1) + 2.0 * at(x - 1, y) + at(x - 1, y + 1));
            let gy = (at(x - 1, y + 1) + 2.0 * at(x, y + 1) + at(x + 1, y + 1))
                - (at(x - 1, y - 1) + 2.0 * at(x, y - 1) + at(x + 1, y - 1));
            let i = y as usize * w + x as usize;
            mag[i] = gx.hypot(gy);
            let angle = gy.atan2(gx).to_degrees().rem_euclid(180.0);
            dir[i] = match angle {
                a if !(22.5..157.5).contains(&a) => 0,
                a if a < 67.5 => 1,
                a if a < 112.5 => 2,
                _ => 3,
            };
        }
    }
    let max = mag.iter().cloned().fold(0.0, f64::max);
    let mut out = Plane::zeros(w, h);
    if max <= 0.0 {
        return Ok(out);
    }
    let m = |x: isize, y: isize| {
        if x < 0 || y < 0 || x >= w as isize || y >= h as isize {
            0.0
        } else {
            mag[y as usize * w + x as usize]
        }
    };
    // non-maximum suppression; a plateau keeps its first pixel only
    let mut thin = vec![0.0; w * h];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let i = y as usize * w + x as usize;
            let (dx, dy) = [(1, 0), (1, 1), (0, 1), (-1, 1)][dir[i] as usize];
            let v = mag[i];
            if v > m(x - dx, y - dy) && v >= m(x + dx, y + dy) {
                thin[i] = v;
            }
        }
    }
    let (lo, hi) = (low_frac * max, high_frac * max);
    let mut stack: Vec<usize> = (0..w * h).filter(|&i| thin[i] >= hi).collect();
    for &i in &stack {
        out.data[i] = 1.0;
    }
    while let Some(i) = stack.pop() {
        let (x, y) = ((i % w) as isize, (i / w) as isize);
        for dy in -1..=1 {
            for dx in -1..=1 {
                let (nx, ny) = (x + dx, y + dy);
                if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                    continue;
                }
                let j = ny as usize * w + nx as usize;
                if out.data[j] == 0.0 && thin[j] >= lo {
                    out.data[j] = 1.0;
                    stack.push(j);
                }
            }
        }
    }
    Ok(out)
}
