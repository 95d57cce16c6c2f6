use std::f64::consts::PI;

use super::OrthoImage;

const LOBES: f64 = 3.0;

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        let px = PI * x;
        px.sin() / px
    }
}

fn lanczos3(x: f64) -> f64 {
    if x.abs() < LOBES {
        sinc(x) * sinc(x / LOBES)
    } else {
        0.0
    }
}

/// Normalized taps for each output index along one axis of length `n * factor`.
fn taps(n_out: usize, factor: usize) -> Vec<(usize, Vec<f64>)> {
    let n_in = n_out * factor;
    let f = factor as f64;
    let support = LOBES * f;
    (0..n_out)
        .map(|o| {
            let center = (o as f64 + 0.5) * f;
            let lo = (center - support).floor().max(0.0) as usize;
            let hi = ((center + support).ceil() as usize).min(n_in);
            let mut w: Vec<f64> = (lo..hi).map(|i| lanczos3((i as f64 + 0.5 - center) / f)).collect();
            let total: f64 = w.iter().sum();
            w.iter_mut().for_each(|v| *v /= total);
            (lo, w)
        })
        .collect()
}

/// Reduces a supersampled image by `factor` with a separable Lanczos-3
/// filter that ignores hole samples.
///
/// An output pixel is a hole when strictly more than half of its
/// `factor × factor` block is. If the surviving filter mass is too small
/// for a stable normalization, the pixel falls back to the mean of the
/// non-hole samples in its block. Roof occupancy is box-averaged.
pub fn downsample_lanczos(img: &OrthoImage, factor: usize) -> OrthoImage {
    let factor = factor.max(1);
    if factor == 1 {
        return img.clone();
    }
    let (w_out, h_out) = (img.width / factor, img.height / factor);
    let h_in = h_out * factor;
    let tx = taps(w_out, factor);
    let ty = taps(h_out, factor);

    // horizontal pass over premultiplied color and coverage
    let mut row_num = vec![[0.0f64; 3]; h_in * w_out];
    let mut row_den = vec![0.0f64; h_in * w_out];
    for y in 0..h_in {
        for (xo, (lo, w)) in tx.iter().enumerate() {
            let mut num = [0.0; 3];
            let mut den = 0.0;
            for (k, wk) in w.iter().enumerate() {
                let i = img.index(lo + k, y);
                if !img.hole_mask[i] {
                    let c = img.rgb[i];
                    for ch in 0..3 {
                        num[ch] += wk * c[ch] as f64;
                    }
                    den += wk;
                }
            }
            row_num[y * w_out + xo] = num;
            row_den[y * w_out + xo] = den;
        }
    }

    let n = w_out * h_out;
    let mut out = OrthoImage {
        width: w_out,
        height: h_out,
        rgb: vec![[0.0; 3]; n],
        hole_mask: vec![false; n],
        roof_alpha: vec![0.0; n],
        georef: super::Georef {
            pixel_scale: img.georef.pixel_scale * factor as f64,
            full_width: img.georef.full_width / factor,
            full_height: img.georef.full_height / factor,
            crop_x: img.georef.crop_x / factor,
            crop_y: img.georef.crop_y / factor,
            ..img.georef
        },
    };
    let block = (factor * factor) as f64;
    for (yo, (lo, w)) in ty.iter().enumerate() {
        for xo in 0..w_out {
            let o = yo * w_out + xo;
            let mut holes = 0usize;
            let mut alpha = 0.0f64;
            let mut mean = [0.0f64; 3];
            for y in yo * factor..(yo + 1) * factor {
                for x in xo * factor..(xo + 1) * factor {
                    let i = img.index(x, y);
                    alpha += img.roof_alpha[i] as f64;
                    if img.hole_mask[i] {
                        holes += 1;
                    } else {
                        for ch in 0..3 {
                            mean[ch] += img.rgb[i][ch] as f64;
                        }
                    }
                }
            }
            out.roof_alpha[o] = (alpha / block) as f32;
            if 2 * holes > factor * factor {
                out.hole_mask[o] = true;
                continue;
            }
            let mut num = [0.0; 3];
            let mut den = 0.0;
            for (k, wk) in w.iter().enumerate() {
                let r = (lo + k) * w_out + xo;
                for ch in 0..3 {
                    num[ch] += wk * row_num[r][ch];
                }
                den += wk * row_den[r];
            }
            let color = if den >= 0.5 {
                num.map(|v| v / den)
            } else {
                let known = block - holes as f64;
                mean.map(|v| v / known)
            };
            out.rgb[o] = color.map(|v| v.clamp(0.0, 255.0) as f32);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn taps_sum_to_one_and_are_symmetric() {
        for f in 2..=4 {
            for (lo, w) in taps(16, f).into_iter().skip(4).take(4) {
                assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                let n = w.len();
                for k in 0..n / 2 {
                    assert!((w[k] - w[n - 1 - k]).abs() < 1e-12, "lo {lo}");
                }
            }
        }
    }

    #[test]
    fn factor_one_is_identity() {
        let img = OrthoImage::from_rgb(3, 2, (0..6).map(|i| [i as f32, 0.0, 255.0]).collect()).unwrap();
        assert_eq!(downsample_lanczos(&img, 1), img);
    }

    #[test]
    fn constant_is_preserved() {
        for f in 2..=4 {
            let img = OrthoImage::filled(12 * f, 8 * f, [17.0, 128.0, 250.0]);
            let out = downsample_lanczos(&img, f);
            assert_eq!((out.width, out.height), (12, 8));
            for c in &out.rgb {
                for (a, b) in c.iter().zip([17.0, 128.0, 250.0]) {
                    assert!((a - b).abs() < 1e-3);
                }
            }
            assert_eq!(out.to_rgb8(), OrthoImage::filled(12, 8, [17.0, 128.0, 250.0]).to_rgb8());
        }
    }

    #[test]
    fn holes_do_not_darken_neighbors() {
        let mut img = OrthoImage::filled(16, 16, [100.0; 3]);
        for y in 0..8 {
            for x in 0..8 {
                let i = img.index(x, y);
                img.hole_mask[i] = true;
                img.rgb[i] = [0.0; 3];
            }
        }
        let out = downsample_lanczos(&img, 2);
        for y in 0..8 {
            for x in 0..8 {
                let i = out.index(x, y);
                assert_eq!(out.hole_mask[i], x < 4 && y < 4);
                if !out.hole_mask[i] {
                    assert!((out.rgb[i][0] - 100.0).abs() < 1e-3);
                }
            }
        }
    }

    #[test]
    fn majority_vote_on_hole_mask() {
        let mut img = OrthoImage::filled(2, 2, [50.0; 3]);
        img.hole_mask = vec![true, true, false, false];
        assert!(!downsample_lanczos(&img, 2).hole_mask[0]);
        img.hole_mask = vec![true, true, true, false];
        assert!(downsample_lanczos(&img, 2).hole_mask[0]);
    }

    #[test]
    fn georef_scales_with_factor() {
        let mut img = OrthoImage::filled(8, 6, [0.0; 3]);
        img.georef.pixel_scale = 0.5;
        let out = downsample_lanczos(&img, 2);
        assert_eq!(out.georef.pixel_scale, 1.0);
        assert_eq!((out.georef.full_width, out.georef.full_height), (4, 3));
        // same plane location for the corner of the frame
        assert_eq!(out.georef.u_min, img.georef.u_min);
    }
}
