//! Synthetic Mondrian scenes obeying the diagonal image-formation model
//! exactly: every pixel is an elementwise product of a patch reflectance
//! and the scene illuminant. These serve as desk-scale oracles for the
//! full pipeline.

use ndarray::Array3;
use rand::prelude::*;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

use crate::color::{normalize_illuminant, LinearImage, UnitRgb};
use crate::data::{LabeledImage, THUMB_SIZE};

const REFL_MIN: f64 = 0.05;
const REFL_MAX: f64 = 0.95;

fn mondrian_reflectances(seed: u64, n_patches: usize) -> Array3<f64> {
    assert!(n_patches >= 1);
    let s = THUMB_SIZE;
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut field = Array3::zeros((s, s, 3));
    // Patch 0 covers the full canvas so reflectance is positive everywhere.
    let paint = |rng: &mut ChaCha12Rng, y0: usize, y1: usize, x0: usize, x1: usize, field: &mut Array3<f64>| {
        let color = [
            rng.random_range(REFL_MIN..REFL_MAX),
            rng.random_range(REFL_MIN..REFL_MAX),
            rng.random_range(REFL_MIN..REFL_MAX),
        ];
        for y in y0..y1 {
            for x in x0..x1 {
                for c in 0..3 {
                    field[(y, x, c)] = color[c];
                }
            }
        }
    };
    paint(&mut rng, 0, s, 0, s, &mut field);
    for _ in 1..n_patches {
        let y0 = rng.random_range(0..s);
        let x0 = rng.random_range(0..s);
        let yl = rng.random_range(4..=20);
        let xl = rng.random_range(4..=20);
        let y1 = (y0 + yl).min(s);
        let x1 = (x0 + xl).min(s);
        paint(&mut rng, y0, y1, x0, x1, &mut field);
    }
    field
}

fn assemble(reflectance: Array3<f64>, illuminant: &UnitRgb, seed: u64) -> LabeledImage {
    let l = illuminant.as_array();
    let mut pixels = reflectance;
    for mut lane in pixels.rows_mut() {
        lane[0] *= l[0];
        lane[1] *= l[1];
        lane[2] *= l[2];
    }
    LabeledImage {
        id: format!("synth-{seed:08x}"),
        image: LinearImage::new(pixels, None).expect("synthetic pixels are nonnegative"),
        truth: *illuminant,
        camera_id: "synthetic".into(),
        scene_id: format!("scene-{seed:08x}"),
        black_level: [0.0; 3],
        saturation_level: 1.0,
    }
}

/// Generates a 64x64 Mondrian of `n_patches` axis-aligned rectangles with
/// reflectances drawn uniformly from [0.05, 0.95]^3, lit by `illuminant`.
/// The reflectance field depends only on the seed, so the same scene can
/// be re-lit by different illuminants.
pub fn synth_scene(seed: u64, n_patches: usize, illuminant: &UnitRgb) -> LabeledImage {
    assemble(mondrian_reflectances(seed, n_patches), illuminant, seed)
}

/// Variant whose area-mean reflectance is exactly achromatic, so the
/// gray-world assumption holds by construction. Per-channel reflectances
/// are rescaled to share their geometric-mean level; the saturation level
/// is raised to keep the clip stage inactive.
pub fn synth_scene_balanced(seed: u64, n_patches: usize, illuminant: &UnitRgb) -> LabeledImage {
    let mut field = mondrian_reflectances(seed, n_patches);
    let n = (THUMB_SIZE * THUMB_SIZE) as f64;
    let mut means = [0.0f64; 3];
    for lane in field.rows() {
        for c in 0..3 {
            means[c] += lane[c];
        }
    }
    for m in means.iter_mut() {
        *m /= n;
    }
    let target = (means[0] * means[1] * means[2]).powf(1.0 / 3.0);
    for mut lane in field.rows_mut() {
        for c in 0..3 {
            lane[c] *= target / means[c];
        }
    }
    let mut img = assemble(field, illuminant, seed);
    img.saturation_level = 2.0;
    img
}

/// A synthetic capture device: a Gaussian illuminant distribution in
/// chroma space plus per-channel sensor gains. Parameters derive
/// deterministically from the dataset seed and camera index, so distinct
/// indices give distinct illuminant distributions.
#[derive(Debug, Clone)]
pub struct SynthCamera {
    pub camera_id: String,
    pub chroma_mean: [f64; 2],
    pub chroma_std: [f64; 2],
    pub gains: [f64; 3],
}

impl SynthCamera {
    pub fn for_index(dataset_seed: u64, index: usize) -> SynthCamera {
        let mut rng =
            ChaCha12Rng::seed_from_u64(dataset_seed.wrapping_mul(0x9e3779b97f4a7c15).wrapping_add(index as u64));
        SynthCamera {
            camera_id: format!("cam{index}"),
            chroma_mean: [rng.random_range(0.65..1.05), rng.random_range(0.55..0.95)],
            chroma_std: [rng.random_range(0.10..0.16), rng.random_range(0.10..0.16)],
            gains: [
                rng.random_range(0.75..1.25),
                1.0,
                rng.random_range(0.75..1.25),
            ],
        }
    }

    /// Draws one scene illuminant: a Gaussian chroma sample lifted to RGB
    /// and filtered through the sensor gains.
    pub fn sample_illuminant(&self, rng: &mut ChaCha12Rng) -> UnitRgb {
        loop {
            let z0: f64 = rng.sample(StandardNormal);
            let z1: f64 = rng.sample(StandardNormal);
            let rg = self.chroma_mean[0] + self.chroma_std[0] * z0;
            let bg = self.chroma_mean[1] + self.chroma_std[1] * z1;
            if rg < 0.05 || bg < 0.05 {
                continue;
            }
            let v = [rg * self.gains[0], self.gains[1], bg * self.gains[2]];
            if let Ok(u) = normalize_illuminant(v) {
                return u;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::color::{angular_error_deg, apply_correction};
    use crate::baselines::gray_world;

    #[test]
    fn achromatic_light_scales_reflectance() {
        let w = normalize_illuminant([1.0, 1.0, 1.0]).unwrap();
        let img = synth_scene(5, 10, &w);
        let corrected = apply_correction(&img.image, &w).unwrap();
        let s = 1.0 / 3.0_f64.sqrt();
        for (orig, rec) in img.image.pixels().iter().zip(corrected.pixels().iter()) {
            assert!((orig - rec * s).abs() < 1e-12);
        }
    }

    #[test]
    fn gray_world_exact_on_balanced_scene() {
        let ell = normalize_illuminant([0.8, 1.0, 0.6]).unwrap();
        let img = synth_scene_balanced(9, 12, &ell);
        let est = gray_world(&img.image).unwrap();
        assert!(angular_error_deg(&est, &ell) < 1e-5);
    }

    #[test]
    fn same_seed_reflectances_relit() {
        let a = normalize_illuminant([0.9, 1.0, 0.7]).unwrap();
        let b = normalize_illuminant([0.5, 1.0, 1.1]).unwrap();
        let img_a = synth_scene(31, 14, &a);
        let img_b = synth_scene(31, 14, &b);
        let (la, lb) = (a.as_array(), b.as_array());
        for (pa, pb) in img_a
            .image
            .pixels()
            .rows()
            .into_iter()
            .zip(img_b.image.pixels().rows())
        {
            for c in 0..3 {
                let expected = la[c] / lb[c];
                assert!((pa[c] / pb[c] - expected).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn forward_model_round_trip_is_exact() {
        let ell = normalize_illuminant([0.7, 1.0, 0.9]).unwrap();
        let img = synth_scene(77, 9, &ell);
        let reflectance = mondrian_reflectances(77, 9);
        let corrected = apply_correction(&img.image, &ell).unwrap();
        for (rec, refl) in corrected.pixels().iter().zip(reflectance.iter()) {
            assert!((rec - refl).abs() < 1e-12);
        }
        // Eq. 3 structure: y / r equals the illuminant channelwise.
        let l = ell.as_array();
        for (obs, refl) in img
            .image
            .pixels()
            .rows()
            .into_iter()
            .zip(reflectance.rows())
        {
            for c in 0..3 {
                assert!(refl[c] > 0.0);
                assert!((obs[c] / refl[c] - l[c]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn cameras_have_distinct_distributions() {
        let a = SynthCamera::for_index(1, 0);
        let b = SynthCamera::for_index(1, 1);
        assert_ne!(a.chroma_mean, b.chroma_mean);
        assert_ne!(a.gains, b.gains);
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        let u = a.sample_illuminant(&mut rng);
        assert!(u.is_valid());
    }
}
