use std::fmt::Write as _;
use std::path::Path;

use image::{GrayImage, Luma, Rgb, RgbImage};

use crate::error::{Error, Result};

/// Placement of an image in plane coordinates.
///
/// `(u_min, v_min)` and the full dimensions describe the frame the image
/// was rasterized into; `crop_x`/`crop_y` locate this image inside it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Georef {
    pub u_min: f64,
    pub v_min: f64,
    pub pixel_scale: f64,
    pub full_width: usize,
    pub full_height: usize,
    pub crop_x: usize,
    pub crop_y: usize,
}

impl Georef {
    /// A frame whose plane coordinates are simply pixel coordinates.
    pub fn identity(width: usize, height: usize) -> Self {
        Self {
            u_min: 0.0,
            v_min: 0.0,
            pixel_scale: 1.0,
            full_width: width,
            full_height: height,
            crop_x: 0,
            crop_y: 0,
        }
    }

    /// Plane coordinates `(u, v)` of the center of pixel `(x, y)`.
    pub fn pixel_center(&self, x: usize, y: usize) -> (f64, f64) {
        let r = self.pixel_scale;
        let u = self.u_min + ((self.crop_x + x) as f64 + 0.5) * r;
        let row_from_bottom = self.full_height as f64 - 1.0 - (self.crop_y + y) as f64;
        (u, self.v_min + (row_from_bottom + 0.5) * r)
    }

    /// Continuous pixel position of plane point `(u, v)`, with pixel
    /// centers at integer coordinates.
    pub fn plane_to_pixel(&self, u: f64, v: f64) -> (f64, f64) {
        let r = self.pixel_scale;
        let x = (u - self.u_min) / r - 0.5 - self.crop_x as f64;
        let y = self.full_height as f64 - 1.0 - ((v - self.v_min) / r - 0.5) - self.crop_y as f64;
        (x, y)
    }

    pub fn to_key_values(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "u_min={:?}", self.u_min);
        let _ = writeln!(s, "v_min={:?}", self.v_min);
        let _ = writeln!(s, "r={:?}", self.pixel_scale);
        let _ = writeln!(s, "full_width={}", self.full_width);
        let _ = writeln!(s, "full_height={}", self.full_height);
        let _ = writeln!(s, "crop_x={}", self.crop_x);
        let _ = writeln!(s, "crop_y={}", self.crop_y);
        s
    }

    pub fn from_key_values(text: &str) -> Result<Self> {
        let mut g = Georef::identity(0, 0);
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: i + 1,
                message: "expected key=value".into(),
            })?;
            let bad = || Error::Parse {
                line: i + 1,
                message: format!("bad value for `{k}`"),
            };
            let (k, v) = (k.trim(), v.trim());
            match k {
                "u_min" => g.u_min = v.parse().map_err(|_| bad())?,
                "v_min" => g.v_min = v.parse().map_err(|_| bad())?,
                "r" => g.pixel_scale = v.parse().map_err(|_| bad())?,
                "full_width" => g.full_width = v.parse().map_err(|_| bad())?,
                "full_height" => g.full_height = v.parse().map_err(|_| bad())?,
                "crop_x" => g.crop_x = v.parse().map_err(|_| bad())?,
                "crop_y" => g.crop_y = v.parse().map_err(|_| bad())?,
                _ => return Err(Error::Schema(format!("unknown georef key `{k}`"))),
            }
        }
        Ok(g)
    }
}

/// RGB raster with a hole mask, stored unquantized (`[0, 255]` floats).
///
/// Hole pixels hold the sentinel `(0, 0, 0)` until they are inpainted.
#[derive(Debug, Clone, PartialEq)]
pub struct OrthoImage {
    pub width: usize,
    pub height: usize,
    pub rgb: Vec<[f32; 3]>,
    pub hole_mask: Vec<bool>,
    /// Effective roof weight used when compositing each pixel.
    pub roof_alpha: Vec<f32>,
    pub georef: Georef,
}

impl OrthoImage {
    /// Hole-free image in pixel-coordinate georeferencing.
    pub fn from_rgb(width: usize, height: usize, rgb: Vec<[f32; 3]>) -> Result<Self> {
        if rgb.len() != width * height {
            return Err(Error::domain(format!(
                "{} pixels supplied for a {width}x{height} image",
                rgb.len()
            )));
        }
        Ok(Self {
            width,
            height,
            rgb,
            hole_mask: vec![false; width * height],
            roof_alpha: vec![0.0; width * height],
            georef: Georef::identity(width, height),
        })
    }

    pub fn filled(width: usize, height: usize, color: [f32; 3]) -> Self {
        Self::from_rgb(width, height, vec![color; width * height]).expect("sizes agree")
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, x: usize, y: usize) -> usize {
        y * self.width + x
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f32; 3] {
        self.rgb[self.index(x, y)]
    }

    pub fn pixel_scale(&self) -> f64 {
        self.georef.pixel_scale
    }

    pub fn hole_count(&self) -> usize {
        self.hole_mask.iter().filter(|&&h| h).count()
    }

    /// Channel values rounded to 8 bits.
    pub fn to_rgb8(&self) -> RgbImage {
        RgbImage::from_fn(self.width as u32, self.height as u32, |x, y| {
            let c = self.pixel(x as usize, y as usize);
            Rgb(c.map(quantize))
        })
    }

    pub fn from_rgb8(img: &RgbImage) -> Self {
        let rgb = img.pixels().map(|p| p.0.map(f32::from)).collect();
        Self::from_rgb(img.width() as usize, img.height() as usize, rgb).expect("sizes agree")
    }

    /// Hole mask as an 8-bit image, 255 marking holes.
    pub fn hole_mask_image(&self) -> GrayImage {
        GrayImage::from_fn(self.width as u32, self.height as u32, |x, y| {
            Luma([if self.hole_mask[self.index(x as usize, y as usize)] {
                255
            } else {
                0
            }])
        })
    }

    pub fn load_png(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let img = image::open(path).map_err(|e| match e {
            image::ImageError::IoError(io) => Error::io(path, io),
            other => Error::Image(other),
        })?;
        Ok(Self::from_rgb8(&img.to_rgb8()))
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        save_image(&self.to_rgb8(), path.as_ref())
    }

    /// Writes `<stem>.holes.png` next to `path`.
    pub fn save_hole_mask(&self, path: impl AsRef<Path>) -> Result<()> {
        save_image(&self.hole_mask_image(), &sidecar_path(path.as_ref(), "holes.png"))
    }

    pub fn save_georef(&self, path: impl AsRef<Path>) -> Result<()> {
        let p = sidecar_path(path.as_ref(), "georef.txt");
        std::fs::write(&p, self.georef.to_key_values()).map_err(|e| Error::io(p, e))
    }

    /// Sets hole flags from a mask image; nonzero marks a hole.
    pub fn apply_mask_image(&mut self, mask: &GrayImage) -> Result<()> {
        if (mask.width() as usize, mask.height() as usize) != (self.width, self.height) {
            return Err(Error::domain("hole mask dimensions differ from the image"));
        }
        for (flag, p) in self.hole_mask.iter_mut().zip(mask.pixels()) {
            *flag = p.0[0] > 0;
        }
        Ok(())
    }
}

pub(crate) fn quantize(v: f32) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

/// `out.png` + `holes.png` -> `out.holes.png`.
pub fn sidecar_path(path: &Path, suffix: &str) -> std::path::PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    path.with_file_name(format!("{stem}.{suffix}"))
}

fn save_image<P, C>(img: &image::ImageBuffer<P, C>, path: &Path) -> Result<()>
where
    P: image::PixelWithColorType,
    [P::Subpixel]: image::EncodableLayout,
    C: std::ops::Deref<Target = [P::Subpixel]>,
{
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| match e {
            image::ImageError::IoError(io) => Error::io(path, io),
            other => Error::Image(other),
        })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pixel_center_round_trip() {
        let g = Georef {
            u_min: -3.0,
            v_min: 10.0,
            pixel_scale: 0.25,
            full_width: 40,
            full_height: 30,
            crop_x: 4,
            crop_y: 3,
        };
        let (u, v) = g.pixel_center(5, 7);
        assert_eq!(u, -3.0 + 9.5 * 0.25);
        assert_eq!(v, 10.0 + (30.0 - 1.0 - 10.0 + 0.5) * 0.25);
        let (x, y) = g.plane_to_pixel(u, v);
        assert!((x - 5.0).abs() < 1e-12 && (y - 7.0).abs() < 1e-12);
        assert_eq!(Georef::from_key_values(&g.to_key_values()).unwrap(), g);
    }

    #[test]
    fn top_row_is_high_v() {
        let g = Georef::identity(4, 4);
        assert!(g.pixel_center(0, 0).1 > g.pixel_center(0, 3).1);
    }

    #[test]
    fn sidecar_names() {
        assert_eq!(
            sidecar_path(Path::new("/a/out.png"), "holes.png"),
            Path::new("/a/out.holes.png")
        );
    }

    #[test]
    fn georef_rejects_unknown_keys() {
        assert!(matches!(Georef::from_key_values("zoom=3\n"), Err(Error::Schema(_))));
    }
}
