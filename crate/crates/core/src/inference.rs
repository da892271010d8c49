//! Inference assembly: candidate-corrected thumbnails scored by the
//! network, combined into a posterior and an illuminant estimate.

use ndarray::Array3;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;

use crate::candidates::CandidateSet;
use crate::data::{corrected_thumbnail, resize_stage, LabeledImage};
use crate::error::Result;
use crate::network::{forward_fused, NetworkParams};
use crate::posterior::{estimate_illuminant, log_posterior, PosteriorResult};

/// Scores every candidate against an already-resized 64x64x3 linear image
/// and returns the posterior. Evaluation mode: no dropout, deterministic.
pub fn infer_resized(
    params: &NetworkParams<f32>,
    cands: &CandidateSet,
    resized: &Array3<f64>,
) -> Result<PosteriorResult> {
    let thumbs: Vec<Array3<f32>> = cands
        .candidates
        .par_iter()
        .map(|cand| {
            let thumb = corrected_thumbnail(resized, cand)?;
            Ok(thumb.pixels.mapv(|v| v as f32))
        })
        .collect::<Result<_>>()?;
    let mut rng = ChaCha12Rng::seed_from_u64(0);
    let (scores_f32, _) = forward_fused(params, &thumbs, false, 0.0, &mut rng)?;
    let log_likelihoods: Vec<f64> = scores_f32.iter().map(|&s| s as f64).collect();
    let gains: Vec<f64> = params.gains.iter().map(|&g| g as f64).collect();
    let biases: Vec<f64> = params.biases.iter().map(|&b| b as f64).collect();
    let logits = log_posterior(&log_likelihoods, &gains, &biases)?;
    estimate_illuminant(cands, &logits)
}

/// Full inference for one labeled image: preprocessing stages 1-4, then
/// per-candidate correction and scoring.
pub fn infer_image(
    params: &NetworkParams<f32>,
    cands: &CandidateSet,
    img: &LabeledImage,
) -> Result<PosteriorResult> {
    let resized = resize_stage(img)?;
    infer_resized(params, cands, &resized)
}
