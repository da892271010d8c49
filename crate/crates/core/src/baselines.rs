//! Classical statistics-based illuminant estimators, used as sanity
//! anchors and comparison rows.

use crate::color::{LinearImage, UnitRgb};
use crate::error::{Error, Result};
use crate::evaluation::sorted_quantile;

/// Gray-world estimate: the per-channel mean over unmasked pixels,
/// normalized. Assumes the average scene reflectance is achromatic.
pub fn gray_world(img: &LinearImage) -> Result<UnitRgb> {
    let pixels = img.pixels();
    let (h, w, _) = pixels.dim();
    let mut sums = [0.0f64; 3];
    let mut count = 0usize;
    for y in 0..h {
        for x in 0..w {
            if !img.is_usable(y, x) {
                continue;
            }
            for c in 0..3 {
                sums[c] += pixels[(y, x, c)];
            }
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::AllMasked);
    }
    for (c, s) in sums.iter().enumerate() {
        if *s <= 0.0 {
            return Err(Error::ZeroChannel(c));
        }
    }
    UnitRgb::normalized(sums[0], sums[1], sums[2])
}

/// White-patch estimate: the per-channel `percentile` (default 100, the
/// max) over unmasked pixels, normalized. Percentiles below 100 give the
/// robust variant that ignores isolated hot pixels.
pub fn white_patch(img: &LinearImage, percentile: f64) -> Result<UnitRgb> {
    assert!(
        (0.0..=100.0).contains(&percentile),
        "percentile must lie in [0, 100]"
    );
    let pixels = img.pixels();
    let (h, w, _) = pixels.dim();
    let mut channels: [Vec<f64>; 3] = [Vec::new(), Vec::new(), Vec::new()];
    for y in 0..h {
        for x in 0..w {
            if !img.is_usable(y, x) {
                continue;
            }
            for c in 0..3 {
                channels[c].push(pixels[(y, x, c)]);
            }
        }
    }
    if channels[0].is_empty() {
        return Err(Error::AllMasked);
    }
    let mut est = [0.0f64; 3];
    for c in 0..3 {
        channels[c].sort_by(|a, b| a.partial_cmp(b).expect("pixels are finite"));
        est[c] = sorted_quantile(&channels[c], percentile / 100.0);
    }
    UnitRgb::normalized(est[0], est[1], est[2])
}
