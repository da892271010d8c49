//! Angular-error statistics and the cross-validation driver.
//!
//! Conventions (fixed so that reported numbers are self-consistent):
//! quantiles use linear interpolation between order statistics (inclusive),
//! and the best/worst-25% buckets contain the ceil(n/4) smallest/largest
//! errors. Cross-camera aggregation is the per-statistic geometric mean.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::candidates::{kmeans_candidates, CandidateSet};
use crate::data::{FoldSpec, LabeledImage};
use crate::error::{Error, Result};
use crate::inference::infer_image;
use crate::network::NetworkParams;
use crate::training::{train, TrainConfig};

/// The standard angular-error summary: mean, median, trimean and the
/// best/worst 25% tails, all in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorStats {
    pub mean: f64,
    pub median: f64,
    pub trimean: f64,
    pub best25: f64,
    pub worst25: f64,
    pub n: usize,
}

/// Linear-interpolated quantile of an ascending-sorted slice, p in [0, 1].
pub(crate) fn sorted_quantile(sorted: &[f64], p: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = p * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// Computes the five-statistic bundle over a list of angular errors in
/// degrees. All inputs must be nonnegative.
pub fn error_stats(errors: &[f64]) -> Result<ErrorStats> {
    if errors.is_empty() {
        return Err(Error::EmptyInput("error_stats"));
    }
    let mut sorted = errors.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("angular errors must be comparable"));
    let n = sorted.len();
    let mean = sorted.iter().sum::<f64>() / n as f64;
    let q1 = sorted_quantile(&sorted, 0.25);
    let q2 = sorted_quantile(&sorted, 0.5);
    let q3 = sorted_quantile(&sorted, 0.75);
    let k = n.div_ceil(4);
    let best25 = sorted[..k].iter().sum::<f64>() / k as f64;
    let worst25 = sorted[n - k..].iter().sum::<f64>() / k as f64;
    Ok(ErrorStats {
        mean,
        median: q2,
        trimean: (q1 + 2.0 * q2 + q3) / 4.0,
        best25,
        worst25,
        n,
    })
}

/// Per-statistic geometric mean across cameras.
///
/// Every statistic must be strictly positive for the geometric mean to be
/// defined; `n` in the summary is the total sample count.
pub fn cross_camera_summary(per_camera: &BTreeMap<String, ErrorStats>) -> Result<ErrorStats> {
    if per_camera.is_empty() {
        return Err(Error::EmptyInput("cross_camera_summary"));
    }
    let m = per_camera.len() as f64;
    let mut log_sums = [0.0f64; 5];
    let mut total_n = 0usize;
    for stats in per_camera.values() {
        let fields = [
            ("mean", stats.mean),
            ("median", stats.median),
            ("trimean", stats.trimean),
            ("best25", stats.best25),
            ("worst25", stats.worst25),
        ];
        for (i, (name, v)) in fields.iter().enumerate() {
            if *v <= 0.0 {
                return Err(Error::NonPositiveStatistic { name, value: *v });
            }
            log_sums[i] += v.ln();
        }
        total_n += stats.n;
    }
    Ok(ErrorStats {
        mean: (log_sums[0] / m).exp(),
        median: (log_sums[1] / m).exp(),
        trimean: (log_sums[2] / m).exp(),
        best25: (log_sums[3] / m).exp(),
        worst25: (log_sums[4] / m).exp(),
        n: total_n,
    })
}

/// Result of a cross-validation run: per-fold statistics plus the pooled
/// statistics over the concatenation of all held-out errors.
#[derive(Debug, Clone, Serialize)]
pub struct CrossValReport {
    pub per_fold: Vec<ErrorStats>,
    pub pooled: ErrorStats,
}

/// Runs scene-grouped cross-validation: for each fold, candidates are
/// fitted and the model trained on the remaining folds only, then the
/// held-out images are scored. Held-out errors are concatenated across
/// folds before the pooled statistics are computed.
pub fn cross_validate(
    datasets: &BTreeMap<String, Vec<LabeledImage>>,
    folds: &FoldSpec,
    config: &TrainConfig,
) -> Result<CrossValReport> {
    let mut per_fold = Vec::new();
    let mut pooled_errors = Vec::new();
    for fold in 0..folds.n_folds {
        let mut train_sets: BTreeMap<String, Vec<LabeledImage>> = BTreeMap::new();
        let mut test_images: Vec<&LabeledImage> = Vec::new();
        for (camera, images) in datasets {
            for img in images {
                let assigned = *folds.assignment.get(&img.scene_id).ok_or_else(|| {
                    Error::BadConfig(format!("scene {} missing from fold spec", img.scene_id))
                })?;
                if assigned == fold {
                    test_images.push(img);
                } else {
                    train_sets.entry(camera.clone()).or_default().push(img.clone());
                }
            }
        }
        if test_images.is_empty() {
            return Err(Error::BadConfig(format!("fold {fold} holds no images")));
        }

        let mut cand_sets: BTreeMap<String, CandidateSet> = BTreeMap::new();
        for (camera, images) in &train_sets {
            let truths: Vec<_> = images.iter().map(|im| im.truth).collect();
            // Leakage guard: candidate fitting must never see a held-out scene.
            for img in images {
                assert_ne!(
                    folds.assignment[&img.scene_id], fold,
                    "test-fold image leaked into candidate fitting"
                );
            }
            let k = config.k_candidates.min(truths.len());
            cand_sets.insert(
                camera.clone(),
                kmeans_candidates(&truths, k, config.seed ^ fold as u64)?,
            );
        }

        let outcome = train(config, &train_sets, &cand_sets)?;
        let params: &NetworkParams<f32> = &outcome.params;

        let mut fold_errors = Vec::new();
        for img in &test_images {
            let cands = cand_sets
                .get(&img.camera_id)
                .ok_or_else(|| Error::MissingCandidateSet(img.camera_id.clone()))?;
            let result = infer_image(params, cands, img)?;
            fold_errors.push(crate::color::angular_error_deg(&result.estimate, &img.truth));
        }
        per_fold.push(error_stats(&fold_errors)?);
        pooled_errors.extend(fold_errors);
    }
    Ok(CrossValReport { pooled: error_stats(&pooled_errors)?, per_fold })
}
