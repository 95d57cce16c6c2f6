//! Synthetic "box city" scenes with analytic nadir ground truth, image
//! comparison metrics, and an oblique pinhole renderer for photos.

use nalgebra::Vector3;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::cloud::ColoredPointCloud;
use crate::error::{Error, Result};
use crate::plane::GroundPlane;
use crate::raster::{Georef, OrthoImage};
use crate::rng::{stream_rng, streams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GroundPattern {
    Uniform { color: [u8; 3] },
    Checkerboard { cell: f64, a: [u8; 3], b: [u8; 3] },
}

impl GroundPattern {
    pub fn color_at(&self, x: f64, y: f64) -> [u8; 3] {
        match *self {
            GroundPattern::Uniform { color } => color,
            GroundPattern::Checkerboard { cell, a, b } => {
                let parity = (x / cell).floor() as i64 + (y / cell).floor() as i64;
                if parity.rem_euclid(2) == 0 {
                    a
                } else {
                    b
                }
            }
        }
    }
}

/// An axis-aligned box standing on the ground.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxSpec {
    pub center: [f64; 2],
    /// Extent along x and y.
    pub size: [f64; 2],
    pub height: f64,
    pub roof: [u8; 3],
    pub wall: [u8; 3],
}

impl BoxSpec {
    fn bounds(&self) -> [f64; 4] {
        let [cx, cy] = self.center;
        let [w, d] = self.size;
        [cx - w / 2.0, cy - d / 2.0, cx + w / 2.0, cy + d / 2.0]
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        let [x0, y0, x1, y1] = self.bounds();
        x >= x0 && x < x1 && y >= y0 && y < y1
    }

    fn wall_area(&self) -> f64 {
        2.0 * (self.size[0] + self.size[1]) * self.height
    }
}

/// Ground spans `[0, size[0]] × [0, size[1]]` at z = 0, z pointing up.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxCityScene {
    pub ground_size: [f64; 2],
    pub ground: GroundPattern,
    pub boxes: Vec<BoxSpec>,
    /// Points per unit² of visible surface.
    pub density: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

const MAGENTA: [u8; 3] = [255, 0, 255];

impl BoxCityScene {
    /// Four 30×30 boxes on a 175×175 checkerboard at 50 points/unit²,
    /// about two million points.
    pub fn standard(seed: u64) -> Self {
        let roofs = [[200, 40, 40], [40, 60, 200], [220, 200, 60], [235, 235, 235]];
        let centers = [[45.0, 45.0], [130.0, 45.0], [45.0, 130.0], [130.0, 130.0]];
        let heights = [18.0, 22.0, 26.0, 20.0];
        Self {
            ground_size: [175.0, 175.0],
            ground: GroundPattern::Checkerboard {
                cell: 10.0,
                a: [70, 130, 60],
                b: [150, 150, 140],
            },
            boxes: (0..4)
                .map(|i| BoxSpec {
                    center: centers[i],
                    size: [30.0, 30.0],
                    height: heights[i],
                    roof: roofs[i],
                    wall: MAGENTA,
                })
                .collect(),
            density: 50.0,
            noise_sigma: 0.02,
            seed,
        }
    }

    /// Like [`BoxCityScene::standard`] but with towers three times taller,
    /// which hide much of the ground from any oblique viewpoint.
    pub fn tall_occluders(seed: u64) -> Self {
        let mut s = Self::standard(seed);
        for (b, h) in s.boxes.iter_mut().zip([60.0, 75.0, 66.0, 70.0]) {
            b.height = h;
            b.size = [24.0, 24.0];
        }
        s.density = 30.0;
        s
    }

    pub fn validate(&self) -> Result<()> {
        let [gw, gh] = self.ground_size;
        if !(gw > 0.0 && gh > 0.0) {
            return Err(Error::domain("ground extent must be positive"));
        }
        if !(self.density > 0.0) || !(self.noise_sigma >= 0.0) {
            return Err(Error::domain("density must be positive and noise nonnegative"));
        }
        if let GroundPattern::Checkerboard { cell, .. } = self.ground {
            if !(cell > 0.0) {
                return Err(Error::domain("checkerboard cell must be positive"));
            }
        }
        for (i, b) in self.boxes.iter().enumerate() {
            let [x0, y0, x1, y1] = b.bounds();
            if !(b.height > 0.0 && b.size[0] > 0.0 && b.size[1] > 0.0) {
                return Err(Error::domain(format!("box {i} needs positive size and height")));
            }
            if x0 < 0.0 || y0 < 0.0 || x1 > gw || y1 > gh {
                return Err(Error::domain(format!("box {i} extends past the ground")));
            }
        }
        Ok(())
    }

    /// Index of the tallest box covering `(x, y)`.
    pub fn box_at(&self, x: f64, y: f64) -> Option<usize> {
        self.boxes
            .iter()
            .enumerate()
            .filter(|(_, b)| b.contains(x, y))
            .max_by(|a, b| a.1.height.total_cmp(&b.1.height).then(b.0.cmp(&a.0)))
            .map(|(i, _)| i)
    }

    /// Color seen looking straight down at `(x, y)`.
    pub fn nadir_color(&self, x: f64, y: f64) -> [u8; 3] {
        match self.box_at(x, y) {
            Some(i) => self.boxes[i].roof,
            None => self.ground.color_at(x, y),
        }
    }

    /// Expected number of generated points.
    pub fn expected_points(&self) -> f64 {
        let [gw, gh] = self.ground_size;
        let walls: f64 = self.boxes.iter().map(BoxSpec::wall_area).sum();
        self.density * (gw * gh + walls)
    }

    /// Samples ground, roofs and walls. Hidden surfaces (ground under a
    /// box, a roof under a taller box, wall parts inside another box) get
    /// no points.
    pub fn sample_points(&self) -> Result<ColoredPointCloud> {
        self.validate()?;
        let mut rng = stream_rng(self.seed, streams::FIXTURE);
        let noise =
            Normal::new(0.0, self.noise_sigma.max(f64::MIN_POSITIVE)).map_err(|e| Error::domain(e.to_string()))?;
        let mut cloud = ColoredPointCloud::with_capacity(self.expected_points() as usize);
        let mut emit = |rng: &mut rand_chacha::ChaCha8Rng, p: [f64; 3], c: [u8; 3]| {
            let jitter = if self.noise_sigma > 0.0 {
                [noise.sample(rng), noise.sample(rng), noise.sample(rng)]
            } else {
                [0.0; 3]
            };
            cloud.push([p[0] + jitter[0], p[1] + jitter[1], p[2] + jitter[2]], c)
        };
        let count = |area: f64| (self.density * area).round() as usize;

        let [gw, gh] = self.ground_size;
        for _ in 0..count(gw * gh) {
            let (x, y) = (rng.random_range(0.0..gw), rng.random_range(0.0..gh));
            if self.box_at(x, y).is_none() {
                emit(&mut rng, [x, y, 0.0], self.ground.color_at(x, y))?;
            }
        }
        for (i, b) in self.boxes.iter().enumerate() {
            let [x0, y0, x1, y1] = b.bounds();
            for _ in 0..count(b.size[0] * b.size[1]) {
                let (x, y) = (rng.random_range(x0..x1), rng.random_range(y0..y1));
                if self.box_at(x, y) == Some(i) {
                    emit(&mut rng, [x, y, b.height], b.roof)?;
                }
            }
            let faces = [
                ([x0, y0], [x1, y0]),
                ([x1, y0], [x1, y1]),
                ([x1, y1], [x0, y1]),
                ([x0, y1], [x0, y0]),
            ];
            for (a, e) in faces {
                let len = (e[0] - a[0]).hypot(e[1] - a[1]);
                for _ in 0..count(len * b.height) {
                    let t: f64 = rng.random_range(0.0..1.0);
                    let z = rng.random_range(0.0..b.height);
                    let (x, y) = (a[0] + t * (e[0] - a[0]), a[1] + t * (e[1] - a[1]));
                    let buried = self
                        .boxes
                        .iter()
                        .enumerate()
                        .any(|(j, o)| j != i && o.height > z && strictly_inside(o, x, y));
                    if !buried {
                        emit(&mut rng, [x, y, z], b.wall)?;
                    }
                }
            }
        }
        Ok(cloud)
    }
}

fn strictly_inside(b: &BoxSpec, x: f64, y: f64) -> bool {
    let [x0, y0, x1, y1] = b.bounds();
    x > x0 && x < x1 && y > y0 && y < y1
}

/// Nadir ground truth of a scene for an image placed by `georef` in the
/// frame of `plane`. Also returns, per pixel, the index of the visible box.
pub fn ground_truth_for(
    scene: &BoxCityScene,
    plane: &GroundPlane,
    georef: Georef,
    width: usize,
    height: usize,
) -> (OrthoImage, Vec<Option<usize>>) {
    truth_image(scene, georef, width, height, |u, v| {
        let p = plane.to_world(&[u, v, 0.0]);
        (p[0], p[1])
    })
}

/// Ground truth in the scene's own frame: u = x, v = y, origin at the
/// ground corner.
pub fn ground_truth(scene: &BoxCityScene, pixel_scale: f64) -> Result<(OrthoImage, Vec<Option<usize>>)> {
    if !(pixel_scale > 0.0) {
        return Err(Error::domain("pixel scale must be positive"));
    }
    let width = (scene.ground_size[0] / pixel_scale).round().max(1.0) as usize;
    let height = (scene.ground_size[1] / pixel_scale).round().max(1.0) as usize;
    let georef = Georef {
        u_min: 0.0,
        v_min: 0.0,
        pixel_scale,
        full_width: width,
        full_height: height,
        crop_x: 0,
        crop_y: 0,
    };
    Ok(truth_image(scene, georef, width, height, |u, v| (u, v)))
}

fn truth_image(
    scene: &BoxCityScene,
    georef: Georef,
    width: usize,
    height: usize,
    to_xy: impl Fn(f64, f64) -> (f64, f64),
) -> (OrthoImage, Vec<Option<usize>>) {
    let mut img = OrthoImage::filled(width, height, [0.0; 3]);
    img.georef = georef;
    let mut boxes = vec![None; width * height];
    for y in 0..height {
        for x in 0..width {
            let (u, v) = georef.pixel_center(x, y);
            let (wx, wy) = to_xy(u, v);
            let i = y * width + x;
            boxes[i] = scene.box_at(wx, wy);
            img.rgb[i] = scene.nadir_color(wx, wy).map(f32::from);
        }
    }
    (img, boxes)
}

/// Scene points and ground truth at `pixel_scale`.
pub fn generate_box_city(scene: &BoxCityScene, pixel_scale: f64) -> Result<(ColoredPointCloud, OrthoImage)> {
    let cloud = scene.sample_points()?;
    let (truth, _) = ground_truth(scene, pixel_scale)?;
    Ok((cloud, truth))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImageComparison {
    pub mean_abs_diff: [f64; 3],
    /// Share of pixels whose largest channel difference is at most 16.
    pub fraction_within_16: f64,
    pub ssim: f64,
    pub compared_pixels: usize,
}

fn max_channel_diff(a: [f32; 3], b: [f32; 3]) -> f32 {
    (0..3).map(|c| (a[c] - b[c]).abs()).fold(0.0, f32::max)
}

/// Share of pixels in `region` (all pixels when `None`) whose largest
/// channel difference is at most `tol`.
pub fn fraction_within(a: &OrthoImage, b: &OrthoImage, tol: f32, region: Option<&[bool]>) -> Result<f64> {
    if (a.width, a.height) != (b.width, b.height) {
        return Err(Error::domain("image dimensions differ"));
    }
    let mut n = 0usize;
    let mut ok = 0usize;
    for i in 0..a.len() {
        if region.is_some_and(|r| !r[i]) {
            continue;
        }
        n += 1;
        if max_channel_diff(a.rgb[i], b.rgb[i]) <= tol {
            ok += 1;
        }
    }
    if n == 0 {
        return Err(Error::domain("comparison region is empty"));
    }
    Ok(ok as f64 / n as f64)
}

const SSIM_WINDOW: usize = 8;

/// Mean absolute difference, within-16 fraction and SSIM (8×8 sliding
/// windows, per channel, averaged). With `exclude_holes`, pixels that are
/// holes in either image are ignored, and so are windows touching them.
pub fn compare_images(a: &OrthoImage, b: &OrthoImage, exclude_holes: bool) -> Result<ImageComparison> {
    if (a.width, a.height) != (b.width, b.height) {
        return Err(Error::domain("image dimensions differ"));
    }
    let valid: Vec<bool> = (0..a.len())
        .map(|i| !exclude_holes || !(a.hole_mask[i] || b.hole_mask[i]))
        .collect();
    let n = valid.iter().filter(|&&v| v).count();
    if n == 0 {
        return Err(Error::domain("no comparable pixels"));
    }
    let mut mad = [0.0f64; 3];
    for i in (0..a.len()).filter(|&i| valid[i]) {
        for c in 0..3 {
            mad[c] += (a.rgb[i][c] as f64 - b.rgb[i][c] as f64).abs();
        }
    }
    Ok(ImageComparison {
        mean_abs_diff: mad.map(|s| s / n as f64),
        fraction_within_16: fraction_within(a, b, 16.0, Some(&valid))?,
        ssim: ssim(a, b, &valid),
        compared_pixels: n,
    })
}

/// Summed-area table with a zero row and column in front.
fn integral(w: usize, h: usize, f: impl Fn(usize) -> f64) -> Vec<f64> {
    let mut s = vec![0.0; (w + 1) * (h + 1)];
    for y in 0..h {
        let mut row = 0.0;
        for x in 0..w {
            row += f(y * w + x);
            s[(y + 1) * (w + 1) + x + 1] = s[y * (w + 1) + x + 1] + row;
        }
    }
    s
}

fn ssim(a: &OrthoImage, b: &OrthoImage, valid: &[bool]) -> f64 {
    let (w, h) = (a.width, a.height);
    let k = SSIM_WINDOW.min(w).min(h);
    let c1 = (0.01f64 * 255.0).powi(2);
    let c2 = (0.03f64 * 255.0).powi(2);
    let invalid = integral(w, h, |i| if valid[i] { 0.0 } else { 1.0 });
    let boxsum = |s: &[f64], x: usize, y: usize| {
        let (x1, y1) = (x + k, y + k);
        s[y1 * (w + 1) + x1] - s[y * (w + 1) + x1] - s[y1 * (w + 1) + x] + s[y * (w + 1) + x]
    };
    let mut total = 0.0;
    let mut windows = 0usize;
    for c in 0..3 {
        let pa = |i: usize| a.rgb[i][c] as f64;
        let pb = |i: usize| b.rgb[i][c] as f64;
        let sa = integral(w, h, pa);
        let sb = integral(w, h, pb);
        let saa = integral(w, h, |i| pa(i) * pa(i));
        let sbb = integral(w, h, |i| pb(i) * pb(i));
        let sab = integral(w, h, |i| pa(i) * pb(i));
        let m = (k * k) as f64;
        for y in 0..=h - k {
            for x in 0..=w - k {
                if boxsum(&invalid, x, y) > 0.0 {
                    continue;
                }
                let (ma, mb) = (boxsum(&sa, x, y) / m, boxsum(&sb, x, y) / m);
                let va = (boxsum(&saa, x, y) / m - ma * ma).max(0.0);
                let vb = (boxsum(&sbb, x, y) / m - mb * mb).max(0.0);
                let cov = boxsum(&sab, x, y) / m - ma * mb;
                total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                windows += 1;
            }
        }
    }
    if windows == 0 {
        f64::NAN
    } else {
        total / windows as f64
    }
}

/// Pinhole camera with square pixels; image y grows downward.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PinholeCamera {
    pub position: Vector3<f64>,
    forward: Vector3<f64>,
    right: Vector3<f64>,
    down: Vector3<f64>,
    pub focal_px: f64,
    pub width: usize,
    pub height: usize,
}

impl PinholeCamera {
    /// Camera at `position` looking at `target` with world z up.
    pub fn look_at(position: [f64; 3], target: [f64; 3], focal_px: f64, width: usize, height: usize) -> Result<Self> {
        let position = Vector3::from(position);
        let forward = (Vector3::from(target) - position)
            .try_normalize(1e-12)
            .ok_or_else(|| Error::domain("camera target coincides with its position"))?;
        let right = forward
            .cross(&Vector3::z())
            .try_normalize(1e-9)
            .ok_or_else(|| Error::domain("camera looks straight up or down; pick another target"))?;
        let down = forward.cross(&right);
        Ok(Self {
            position,
            forward,
            right,
            down,
            focal_px,
            width,
            height,
        })
    }

    /// Continuous pixel position (centers at integers) and depth.
    pub fn project(&self, p: &[f64; 3]) -> Option<(f64, f64, f64)> {
        let d = Vector3::from(*p) - self.position;
        let z = d.dot(&self.forward);
        if z <= 1e-9 {
            return None;
        }
        let cx = (self.width as f64 - 1.0) / 2.0;
        let cy = (self.height as f64 - 1.0) / 2.0;
        Some((
            cx + self.focal_px * d.dot(&self.right) / z,
            cy + self.focal_px * d.dot(&self.down) / z,
            z,
        ))
    }
}

/// Z-buffered point rendering. Each point covers a square sized to its
/// projected sample spacing (`spacing` in scene units), so surfaces come
/// out closed. Pixels no point reaches are holes.
pub fn render_photo(cloud: &ColoredPointCloud, cam: &PinholeCamera, spacing: f64) -> OrthoImage {
    let (w, h) = (cam.width, cam.height);
    let mut depth = vec![f64::INFINITY; w * h];
    let mut img = OrthoImage::filled(w, h, [0.0; 3]);
    for (p, c) in cloud.points().iter().zip(cloud.colors()) {
        let Some((x, y, z)) = cam.project(p) else { continue };
        let half = (0.5 * cam.focal_px * spacing / z).clamp(0.5, 8.0);
        // pixels whose centers fall inside the square, at least the nearest one
        let span = |c: f64| {
            let (lo, hi) = ((c - half).ceil(), (c + half).floor());
            if lo > hi {
                (c.round(), c.round())
            } else {
                (lo, hi)
            }
        };
        let ((x0, x1), (y0, y1)) = (span(x), span(y));
        let (x0, y0) = (x0.max(0.0), y0.max(0.0));
        let (x1, y1) = (x1.min(w as f64 - 1.0), y1.min(h as f64 - 1.0));
        if x0 > x1 || y0 > y1 {
            continue;
        }
        for py in y0 as usize..=y1 as usize {
            for px in x0 as usize..=x1 as usize {
                let i = py * w + px;
                if z < depth[i] {
                    depth[i] = z;
                    img.rgb[i] = c.map(f32::from);
                }
            }
        }
    }
    for (m, d) in img.hole_mask.iter_mut().zip(&depth) {
        *m = d.is_infinite();
    }
    img
}
