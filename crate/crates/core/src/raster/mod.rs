//! Orthographic rendering of plane-aligned point sets.
//!
//! The stages run in this order: height normalization and resolution
//! choice, layered roof/ground splatting on a supersampled grid,
//! compositing, Lanczos reduction to the base grid, and a center crop.
//! [`perspective_fallback`] covers scenes with no usable reconstruction.

mod composite;
mod crop;
mod homography;
mod lanczos;
mod layers;
mod ortho;
mod resolution;

pub use composite::composite;
pub use crop::center_crop;
pub use homography::{load_correspondences, perspective_fallback, Correspondence, Homography};
pub use lanczos::downsample_lanczos;
pub use layers::{rasterize_layers, roof_weight, AccumPixel, OrthoFrameBuffer};
pub use ortho::{sidecar_path, Georef, OrthoImage};
pub use resolution::{
    choose_resolution, grid_size, normalize_heights, pixel_scale_for, HeightNormalization, Resolution,
};

use crate::error::{Error, Result};
use crate::exec::Parallelism;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RasterConfig {
    /// Target points per base pixel.
    pub rho: f64,
    /// Pixel-scale clamp, scene units per base pixel.
    pub r_min: f64,
    pub r_max: f64,
    /// Upper bound on base-grid pixel count.
    pub p_max: u64,
    pub ssaa: usize,
    /// Roof band width as a fraction of the robust (p05..p95) normalized height range.
    pub roof_band_frac: f64,
    /// Half-width of the ground band, in normalized height units.
    pub ground_band: f64,
    /// Roof pixels with fewer hits are cleared.
    pub m_min: u32,
    /// Splat radius on the supersampled grid.
    pub splat_radius_px: f64,
    /// Fraction removed from each side by the final crop.
    pub crop_frac: f64,
    /// Roof weight sum at which roof occupancy saturates to 1.
    pub w_sat: f64,
    /// Lower bound on the height normalization scale, as a fraction of the
    /// in-plane bounding-box diagonal. Keeps noise on flat scenes from being
    /// stretched into "buildings".
    pub min_height_scale_frac: f64,
    /// A supersampled pixel whose roof candidates below the top band
    /// outnumber those inside it by more than this factor is treated as a
    /// wall: both layers are cleared and the pixel is left to inpainting.
    /// Zero disables the test.
    pub facade_ratio: f64,
    pub parallelism: Parallelism,
}

impl Default for RasterConfig {
    fn default() -> Self {
        Self {
            rho: 4.0,
            r_min: 0.02,
            r_max: 0.50,
            p_max: 16_777_216,
            ssaa: 2,
            roof_band_frac: 0.15,
            ground_band: 0.12,
            m_min: 3,
            splat_radius_px: 2.0,
            crop_frac: 0.10,
            w_sat: 1.0,
            min_height_scale_frac: 0.01,
            facade_ratio: 2.0,
            parallelism: Parallelism::default(),
        }
    }
}

impl RasterConfig {
    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, what: &str| {
            if ok {
                Ok(())
            } else {
                Err(Error::domain(format!("invalid raster config: {what}")))
            }
        };
        check(self.rho > 0.0 && self.rho.is_finite(), "rho must be positive")?;
        check(
            self.r_min > 0.0 && self.r_min <= self.r_max && self.r_max.is_finite(),
            "need 0 < r_min <= r_max",
        )?;
        check(self.p_max >= 1, "p_max must be at least 1")?;
        check((1..=4).contains(&self.ssaa), "ssaa must be 1, 2, 3 or 4")?;
        check(
            self.roof_band_frac > 0.0 && self.roof_band_frac.is_finite(),
            "roof band must be positive",
        )?;
        check(
            self.ground_band >= 0.0 && self.ground_band.is_finite(),
            "ground band must be >= 0",
        )?;
        check(self.m_min >= 1, "m_min must be at least 1")?;
        check(
            self.splat_radius_px > 0.0 && self.splat_radius_px <= 16.0,
            "splat radius must be in (0, 16]",
        )?;
        check((0.0..0.5).contains(&self.crop_frac), "crop_frac must be in [0, 0.5)")?;
        check(self.w_sat > 0.0 && self.w_sat.is_finite(), "w_sat must be positive")?;
        check(
            self.min_height_scale_frac >= 0.0 && self.min_height_scale_frac.is_finite(),
            "min_height_scale_frac must be >= 0",
        )?;
        check(
            self.facade_ratio >= 0.0 && self.facade_ratio.is_finite(),
            "facade_ratio must be >= 0",
        )
    }
}
