use super::{OrthoFrameBuffer, OrthoImage};

/// Blends the layers: `c = α·c_roof + (1 − α)·c_ground` with
/// `α = min(1, roof_weight / w_sat)`.
///
/// A pixel with a roof but no ground samples takes the roof color
/// (α = 1). A pixel with neither is a hole.
pub fn composite(buf: &OrthoFrameBuffer) -> OrthoImage {
    let n = buf.width * buf.height;
    let mut rgb = Vec::with_capacity(n);
    let mut hole_mask = Vec::with_capacity(n);
    let mut roof_alpha = Vec::with_capacity(n);
    for p in &buf.pixels {
        let roof = if p.roof_hits >= buf.m_min { p.roof_color() } else { None };
        let (color, alpha) = match (roof, p.ground_color()) {
            (Some(roof), Some(ground)) => {
                let a = (p.roof_weight / buf.w_sat).min(1.0);
                let mut c = [0.0; 3];
                for k in 0..3 {
                    c[k] = a * roof[k] + (1.0 - a) * ground[k];
                }
                (Some(c), a)
            }
            (Some(roof), None) => (Some(roof), 1.0),
            (None, Some(ground)) => (Some(ground), 0.0),
            (None, None) => (None, 0.0),
        };
        hole_mask.push(color.is_none());
        rgb.push(color.unwrap_or([0.0; 3]).map(|v| v as f32));
        roof_alpha.push(alpha as f32);
    }
    OrthoImage {
        width: buf.width,
        height: buf.height,
        rgb,
        hole_mask,
        roof_alpha,
        georef: buf.georef,
    }
}
