//! Point cloud to pseudo-satellite orthophoto.

use std::time::{Duration, Instant};

use crate::cloud::ColoredPointCloud;
use crate::error::Result;
use crate::plane::{self, GroundPlane, RansacParams};
use crate::raster::{self, HeightNormalization, OrthoImage, RasterConfig, Resolution};

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RenderConfig {
    pub raster: RasterConfig,
    pub ransac: RansacParams,
}

#[derive(Debug, Clone)]
pub struct RenderOutput {
    /// Cropped base-resolution image, holes not yet filled.
    pub image: OrthoImage,
    /// Base-resolution image before cropping.
    pub uncropped: OrthoImage,
    pub plane: GroundPlane,
    pub normalization: HeightNormalization,
    pub resolution: Resolution,
    pub timings: Vec<(&'static str, Duration)>,
}

struct Stopwatch {
    last: Instant,
    laps: Vec<(&'static str, Duration)>,
}

impl Stopwatch {
    fn new() -> Self {
        Self {
            last: Instant::now(),
            laps: Vec::new(),
        }
    }

    fn lap(&mut self, stage: &'static str) {
        let now = Instant::now();
        self.laps.push((stage, now - self.last));
        self.last = now;
    }
}

/// Fits the ground plane, rasterizes roof and ground layers on the
/// supersampled grid, composites, reduces with Lanczos, and crops.
///
/// Fails with [`crate::Error::NoPlane`] when no ground plane can be found;
/// the perspective fallback is the remedy in that case.
pub fn render_orthophoto(cloud: &ColoredPointCloud, cfg: &RenderConfig, seed: u64) -> Result<RenderOutput> {
    cfg.raster.validate()?;
    let mut clock = Stopwatch::new();
    let ransac = RansacParams { seed, ..cfg.ransac };
    let fitted = plane::fit_plane_ransac(cloud, &ransac)?;
    clock.lap("plane_fit");
    let pts = plane::to_plane_coords(cloud, &fitted);
    let (pts, plane) = plane::fix_orientation(pts, fitted);
    clock.lap("plane_coords");
    let normalization = raster::normalize_heights(&pts, &cfg.raster)?;
    let resolution = raster::choose_resolution(&pts, &cfg.raster, &normalization)?;
    clock.lap("resolution");
    log::debug!(
        "pixel scale {:.4}, {}x{} base pixels, ssaa {}",
        resolution.pixel_scale,
        resolution.width,
        resolution.height,
        cfg.raster.ssaa
    );
    let buffer = raster::rasterize_layers(&pts, &cfg.raster, &resolution, &normalization);
    clock.lap("rasterize");
    let supersampled = raster::composite(&buffer);
    drop(buffer);
    clock.lap("composite");
    let uncropped = raster::downsample_lanczos(&supersampled, cfg.raster.ssaa);
    clock.lap("downsample");
    let image = raster::center_crop(&uncropped, cfg.raster.crop_frac)?;
    clock.lap("crop");
    Ok(RenderOutput {
        image,
        uncropped,
        plane,
        normalization,
        resolution,
        timings: clock.laps,
    })
}
