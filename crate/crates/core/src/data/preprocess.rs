//! Image-to-network preprocessing.
//!
//! The fixed pipeline order is: (1) black-level subtraction clamped at 0,
//! (2) clipping at 95% of the post-black-level full scale, (3) zeroing of
//! masked pixels, (4) area-average resize to 64x64, then — after an
//! optional candidate correction — (5) divide-by-max normalization and
//! (6) the log transform ln(x + 1e-4).

use ndarray::{Array2, Array3};

use crate::color::{correct_pixels, UnitRgb};
use crate::data::LabeledImage;
use crate::error::{Error, Result};

pub const THUMB_SIZE: usize = 64;
pub const SATURATION_CLIP: f64 = 0.95;
pub const LOG_EPSILON: f64 = 1e-4;

/// The network-ready 64x64x3 representation. Values are finite by
/// construction (the log transform is applied to nonnegative inputs).
#[derive(Debug, Clone)]
pub struct Thumbnail {
    pub pixels: Array3<f64>,
}

/// Exact box-filter resize along both axes. Each output pixel averages the
/// input area it covers, with fractional rows/columns weighted by overlap.
pub fn resize_area_average(input: &Array3<f64>, out_h: usize, out_w: usize) -> Array3<f64> {
    let (h, w, c) = input.dim();
    let tmp = resize_axis(input, out_h, h, w, c, true);
    resize_axis(&tmp, out_w, out_h, w, c, false)
}

fn resize_axis(
    input: &Array3<f64>,
    out_len: usize,
    h: usize,
    w: usize,
    c: usize,
    vertical: bool,
) -> Array3<f64> {
    let in_len = if vertical { h } else { w };
    let (oh, ow) = if vertical { (out_len, w) } else { (h, out_len) };
    let mut out = Array3::zeros((oh, ow, c));
    let scale = in_len as f64 / out_len as f64;
    for o in 0..out_len {
        let start = o as f64 * scale;
        let end = (o + 1) as f64 * scale;
        let first = start.floor() as usize;
        let last = (end.ceil() as usize).min(in_len);
        for other in 0..(if vertical { w } else { h }) {
            for ch in 0..c {
                let mut acc = 0.0;
                for i in first..last {
                    let lo = (i as f64).max(start);
                    let hi = ((i + 1) as f64).min(end);
                    let weight = hi - lo;
                    if weight <= 0.0 {
                        continue;
                    }
                    let v = if vertical { input[(i, other, ch)] } else { input[(other, i, ch)] };
                    acc += v * weight;
                }
                let value = acc / scale;
                if vertical {
                    out[(o, other, ch)] = value;
                } else {
                    out[(other, o, ch)] = value;
                }
            }
        }
    }
    out
}

/// Steps 1-4: black level, clip, mask, resize. Returns the resized 64x64x3
/// linear image ready for per-candidate correction.
pub fn resize_stage(img: &LabeledImage) -> Result<Array3<f64>> {
    for c in 0..3 {
        if img.black_level[c] >= img.saturation_level {
            return Err(Error::BlackLevelExceedsSaturation {
                black: img.black_level[c],
                saturation: img.saturation_level,
            });
        }
    }
    let pixels = img.image.pixels();
    let (h, w, _) = pixels.dim();
    let mask: Option<&Array2<bool>> = img.image.mask();
    if let Some(m) = mask {
        if !m.iter().any(|&u| u) {
            return Err(Error::AllMasked);
        }
    }
    let mut cleaned = Array3::zeros((h, w, 3));
    for y in 0..h {
        for x in 0..w {
            let usable = mask.map_or(true, |m| m[(y, x)]);
            if !usable {
                continue; // stays zero
            }
            for c in 0..3 {
                let v = (pixels[(y, x, c)] - img.black_level[c]).max(0.0);
                let limit = SATURATION_CLIP * (img.saturation_level - img.black_level[c]);
                cleaned[(y, x, c)] = v.min(limit);
            }
        }
    }
    Ok(resize_area_average(&cleaned, THUMB_SIZE, THUMB_SIZE))
}

/// Steps 5-6 on an already-resized (and possibly candidate-corrected)
/// 64x64x3 image: divide by the global max, then ln(x + epsilon).
pub fn finish_thumbnail(resized: &Array3<f64>) -> Result<Thumbnail> {
    let max = resized.iter().cloned().fold(0.0f64, f64::max);
    if max <= 0.0 || !max.is_finite() {
        return Err(Error::AllMasked);
    }
    let pixels = resized.mapv(|v| (v / max + LOG_EPSILON).ln());
    debug_assert!(pixels.iter().all(|v| v.is_finite()));
    Ok(Thumbnail { pixels })
}

/// The full preprocessing pipeline without candidate correction.
pub fn preprocess(img: &LabeledImage) -> Result<Thumbnail> {
    finish_thumbnail(&resize_stage(img)?)
}

/// Training/inference assembly: candidate correction slots between the
/// resize and the normalization.
pub fn corrected_thumbnail(resized: &Array3<f64>, ell: &UnitRgb) -> Result<Thumbnail> {
    finish_thumbnail(&correct_pixels(resized, ell)?)
}
