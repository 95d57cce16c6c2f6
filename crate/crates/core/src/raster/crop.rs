use super::OrthoImage;
use crate::error::{Error, Result};

/// Removes `⌊frac·W⌋` columns and `⌊frac·H⌋` rows from each side. The
/// georeference is shifted so kept pixels keep their plane coordinates.
pub fn center_crop(img: &OrthoImage, frac: f64) -> Result<OrthoImage> {
    if !(0.0..0.5).contains(&frac) {
        return Err(Error::domain(format!("crop fraction {frac} outside [0, 0.5)")));
    }
    let dx = (frac * img.width as f64).floor() as usize;
    let dy = (frac * img.height as f64).floor() as usize;
    let (w, h) = (img.width.saturating_sub(2 * dx), img.height.saturating_sub(2 * dy));
    if w == 0 || h == 0 {
        return Err(Error::domain(format!(
            "cropping {}x{} by {frac} leaves no pixels",
            img.width, img.height
        )));
    }
    let pick = |i: usize| {
        let (x, y) = (i % w, i / w);
        img.index(x + dx, y + dy)
    };
    let n = w * h;
    Ok(OrthoImage {
        width: w,
        height: h,
        rgb: (0..n).map(|i| img.rgb[pick(i)]).collect(),
        hole_mask: (0..n).map(|i| img.hole_mask[pick(i)]).collect(),
        roof_alpha: (0..n).map(|i| img.roof_alpha[pick(i)]).collect(),
        georef: super::Georef {
            crop_x: img.georef.crop_x + dx,
            crop_y: img.georef.crop_y + dy,
            ..img.georef
        },
    })
}
