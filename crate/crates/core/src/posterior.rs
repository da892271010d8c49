//! Posterior combination: per-candidate affine log-posteriors, the
//! softmax soft-argmax illuminant estimate, and the angular-error loss
//! with its analytic gradient back to the logits.
//!
//! All math here runs in f64; the training loop casts network scores up
//! and gradients back down at the boundary.

use serde::Serialize;

use crate::candidates::CandidateSet;
use crate::color::{angular_error_deg, UnitRgb};
use crate::error::{Error, Result};

/// Posterior over candidates and the resulting estimate.
#[derive(Debug, Clone)]
pub struct PosteriorResult {
    pub log_posteriors: Vec<f64>,
    pub probs: Vec<f64>,
    pub estimate: UnitRgb,
}

/// Per-candidate affine transform of log-likelihoods: `g * ll + b`.
/// With unit gains and zero biases (the multi-device configuration) this
/// is the identity.
pub fn log_posterior(log_likelihoods: &[f64], gains: &[f64], biases: &[f64]) -> Result<Vec<f64>> {
    if log_likelihoods.len() != gains.len() {
        return Err(Error::LengthMismatch {
            what: "log_likelihoods vs gains",
            left: log_likelihoods.len(),
            right: gains.len(),
        });
    }
    if gains.len() != biases.len() {
        return Err(Error::LengthMismatch {
            what: "gains vs biases",
            left: gains.len(),
            right: biases.len(),
        });
    }
    Ok(log_likelihoods
        .iter()
        .zip(gains)
        .zip(biases)
        .map(|((ll, g), b)| g * ll + b)
        .collect())
}

fn stable_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Softmax over the log-posteriors and the probability-weighted candidate
/// sum, L2-normalized: the minimum-MSE Bayesian estimate restricted to
/// the candidate hull.
pub fn estimate_illuminant(cands: &CandidateSet, log_posteriors: &[f64]) -> Result<PosteriorResult> {
    if cands.len() != log_posteriors.len() {
        return Err(Error::LengthMismatch {
            what: "candidates vs log_posteriors",
            left: cands.len(),
            right: log_posteriors.len(),
        });
    }
    if let Some(i) = log_posteriors.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFiniteLogit(i));
    }
    let probs = stable_softmax(log_posteriors);
    let mut sum = [0.0f64; 3];
    for (p, cand) in probs.iter().zip(&cands.candidates) {
        let a = cand.as_array();
        sum[0] += p * a[0];
        sum[1] += p * a[1];
        sum[2] += p * a[2];
    }
    let estimate = UnitRgb::from_array(sum)?;
    Ok(PosteriorResult { log_posteriors: log_posteriors.to_vec(), probs, estimate })
}

/// Highest-probability candidate index: the MAP decode. Diagnostic only;
/// the soft-argmax is what trains and infers.
pub fn map_index(result: &PosteriorResult) -> usize {
    result
        .probs
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).expect("probs are finite"))
        .map(|(i, _)| i)
        .expect("posterior is non-empty")
}

/// Derivative clamp: past |cos| = 1 - 1e-7 the arccos derivative is
/// replaced by its boundary value (the derivative of the quadratic
/// surrogate 1 - cos matched at the boundary), keeping gradients finite
/// as the estimate approaches the truth.
const COLINEAR_GUARD: f64 = 1e-7;

/// Angular loss (radians) between the soft-argmax estimate and the ground
/// truth, plus the gradient of the loss with respect to every logit.
///
/// The chain runs loss -> cos -> weighted sum -> softmax; the gradient
/// sums to zero across logits by softmax shift invariance.
pub fn loss_and_grad(
    result: &PosteriorResult,
    truth: &UnitRgb,
    cands: &CandidateSet,
) -> (f64, Vec<f64>) {
    let n = result.probs.len();
    assert_eq!(n, cands.len(), "posterior and candidate set disagree");
    let t = truth.as_array();

    // Unnormalized weighted sum s and its norm.
    let mut s = [0.0f64; 3];
    for (p, cand) in result.probs.iter().zip(&cands.candidates) {
        let a = cand.as_array();
        s[0] += p * a[0];
        s[1] += p * a[1];
        s[2] += p * a[2];
    }
    let norm = (s[0] * s[0] + s[1] * s[1] + s[2] * s[2]).sqrt();
    let u = [s[0] / norm, s[1] / norm, s[2] / norm];
    let cos = (u[0] * t[0] + u[1] * t[1] + u[2] * t[2]).clamp(-1.0, 1.0);
    let loss = cos.acos();

    // d loss / d cos, clamped near |cos| = 1.
    let boundary = 1.0 - COLINEAR_GUARD;
    let sin_floor = (1.0 - boundary * boundary).sqrt();
    let sin = (1.0 - cos * cos).sqrt().max(sin_floor);
    let dloss_dcos = -1.0 / sin;

    // d cos / d s = (t - cos * u) / |s|.
    let dcos_ds = [
        (t[0] - cos * u[0]) / norm,
        (t[1] - cos * u[1]) / norm,
        (t[2] - cos * u[2]) / norm,
    ];

    // d loss / d p_i = dloss_dcos * (dcos_ds . candidate_i)
    let dl_dp: Vec<f64> = cands
        .candidates
        .iter()
        .map(|c| {
            let a = c.as_array();
            dloss_dcos * (dcos_ds[0] * a[0] + dcos_ds[1] * a[1] + dcos_ds[2] * a[2])
        })
        .collect();

    // Softmax Jacobian: dL/dz_i = p_i (g_i - sum_j p_j g_j).
    let inner: f64 = result.probs.iter().zip(&dl_dp).map(|(p, g)| p * g).sum();
    let dl_dlogits: Vec<f64> = result
        .probs
        .iter()
        .zip(&dl_dp)
        .map(|(p, g)| p * (g - inner))
        .collect();

    (loss, dl_dlogits)
}

/// One row of the inference report.
#[derive(Debug, Clone, Serialize)]
pub struct ReportRow {
    pub image_id: String,
    pub estimate: [f64; 3],
    pub top5: Vec<TopCandidate>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub angular_error_deg: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct TopCandidate {
    pub index: usize,
    pub prob: f64,
}

impl ReportRow {
    pub fn new(image_id: &str, result: &PosteriorResult, truth: Option<&UnitRgb>) -> ReportRow {
        let mut order: Vec<usize> = (0..result.probs.len()).collect();
        order.sort_by(|&a, &b| {
            result.probs[b]
                .partial_cmp(&result.probs[a])
                .expect("probs are finite")
                .then(a.cmp(&b))
        });
        ReportRow {
            image_id: image_id.to_string(),
            estimate: result.estimate.as_array(),
            top5: order
                .into_iter()
                .take(5)
                .map(|i| TopCandidate { index: i, prob: result.probs[i] })
                .collect(),
            angular_error_deg: truth.map(|t| angular_error_deg(&result.estimate, t)),
        }
    }
}
