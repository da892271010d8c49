//! Candidate illuminant selection: discretizes a camera's illuminant space
//! into a fixed set of unit RGB vectors.
//!
//! Three strategies are provided: K-means cluster centers in RGB space,
//! a uniform lattice over the observed chroma bounding box, and samples
//! drawn from a Gaussian mixture fitted in chroma space. The candidate
//! order is stable and index-aligned with the per-candidate gain/bias
//! parameters, so serialization must round-trip bit-exactly.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::Path;

use rand::prelude::*;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::color::{angular_error_deg, chroma, inverse_chroma, ChromaPoint, UnitRgb};
use crate::error::{Error, Result};
use crate::evaluation::{error_stats, ErrorStats};

pub const CANDIDATE_FILE_VERSION: u32 = 1;

/// How a candidate set was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMethod {
    KMeans,
    UniformGrid,
    GmmSample,
}

/// A camera's discretized illuminant space.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSet {
    pub camera_id: String,
    pub candidates: Vec<UnitRgb>,
    pub selection_method: SelectionMethod,
    pub seed: u64,
}

impl CandidateSet {
    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    /// Serializes to the versioned JSON document with 17-significant-digit
    /// floats, so that parsing the output reproduces every candidate bit
    /// for bit.
    pub fn to_json(&self) -> String {
        let doc = CandidateSetDoc {
            version: CANDIDATE_FILE_VERSION,
            camera_id: self.camera_id.clone(),
            method: self.selection_method,
            seed: self.seed,
            candidates: self.candidates.iter().map(|c| c.as_array()).collect(),
        };
        canonical_json(&doc)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: CandidateSetDoc = serde_json::from_str(text)?;
        if doc.version != CANDIDATE_FILE_VERSION {
            return Err(Error::BadConfig(format!(
                "unsupported candidate file version {}",
                doc.version
            )));
        }
        let mut candidates = Vec::with_capacity(doc.candidates.len());
        for v in doc.candidates {
            candidates.push(UnitRgb::from_array(v)?);
        }
        if candidates.is_empty() {
            return Err(Error::EmptyInput("candidate file holds no candidates"));
        }
        Ok(CandidateSet {
            camera_id: doc.camera_id,
            candidates,
            selection_method: doc.method,
            seed: doc.seed,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = self.to_json();
        text.push('\n');
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// SHA-256 of the canonical JSON document; checkpoints store this so
    /// that gain/bias indices can be verified against the candidate order.
    pub fn content_hash(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.to_json().as_bytes());
        hex_string(&hasher.finalize())
    }
}

#[derive(Serialize, Deserialize)]
struct CandidateSetDoc {
    version: u32,
    camera_id: String,
    method: SelectionMethod,
    seed: u64,
    candidates: Vec<[f64; 3]>,
}

fn hex_string(bytes: &[u8]) -> String {
    let mut s = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        s.push_str(&format!("{b:02x}"));
    }
    s
}

/// JSON serialization that prints every f64 with 17 significant digits.
pub fn canonical_json<T: Serialize>(value: &T) -> String {
    struct SigDigits;
    impl serde_json::ser::Formatter for SigDigits {
        fn write_f64<W: ?Sized + Write>(&mut self, writer: &mut W, value: f64) -> std::io::Result<()> {
            write!(writer, "{value:.16e}")
        }
    }
    let mut out = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut out, SigDigits);
    value.serialize(&mut ser).expect("serialization cannot fail for plain data");
    String::from_utf8(out).expect("json output is utf8")
}

// ---------------------------------------------------------------------------
// K-means
// ---------------------------------------------------------------------------

fn dist_sq(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let dr = a[0] - b[0];
    let dg = a[1] - b[1];
    let db = a[2] - b[2];
    dr * dr + dg * dg + db * db
}

fn count_distinct(points: &[[f64; 3]]) -> usize {
    let mut set = BTreeSet::new();
    for p in points {
        set.insert([p[0].to_bits(), p[1].to_bits(), p[2].to_bits()]);
    }
    set.len()
}

/// k-means++ seeding: first center uniform, subsequent centers drawn with
/// probability proportional to squared distance from the nearest chosen
/// center. The weighted draw is a hand-rolled cumulative walk so the
/// result depends only on the seed, not on RNG library internals.
fn kmeans_pp_init(points: &[[f64; 3]], k: usize, rng: &mut ChaCha12Rng) -> Vec<[f64; 3]> {
    let n = points.len();
    let mut centers = Vec::with_capacity(k);
    centers.push(points[rng.random_range(0..n)]);
    let mut d2: Vec<f64> = points.iter().map(|p| dist_sq(p, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total <= 0.0 {
            // All remaining points coincide with chosen centers; the caller
            // guarantees k <= distinct count, so this cannot strand us.
            points
                .iter()
                .position(|p| centers.iter().all(|c| dist_sq(p, c) > 0.0))
                .unwrap_or(0)
        } else {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                acc += w;
                if acc > target {
                    pick = i;
                    break;
                }
            }
            pick
        };
        centers.push(points[next]);
        for (i, p) in points.iter().enumerate() {
            let d = dist_sq(p, centers.last().unwrap());
            if d < d2[i] {
                d2[i] = d;
            }
        }
    }
    centers
}

pub(crate) struct LloydResult {
    pub centers: Vec<[f64; 3]>,
    // Consumed by the invariant tests.
    #[allow(dead_code)]
    pub assignment: Vec<usize>,
    pub wcss_history: Vec<f64>,
}

/// Lloyd's algorithm with k-means++ seeding. Ties in the assignment step
/// break toward the lowest center index; empty clusters are repaired by
/// promoting the point farthest from its current center to a singleton.
/// Iteration stops when no assignment changes or after `max_iters`.
pub(crate) fn lloyd(
    points: &[[f64; 3]],
    k: usize,
    seed: u64,
    max_iters: usize,
) -> LloydResult {
    let n = points.len();
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut centers = kmeans_pp_init(points, k, &mut rng);
    let mut assignment = vec![usize::MAX; n];
    let mut wcss_history: Vec<f64> = Vec::new();

    for _iter in 0..max_iters {
        // Assignment phase.
        let mut changed = false;
        let mut wcss = 0.0;
        for (i, p) in points.iter().enumerate() {
            let mut best = 0;
            let mut best_d = dist_sq(p, &centers[0]);
            for (j, c) in centers.iter().enumerate().skip(1) {
                let d = dist_sq(p, c);
                if d < best_d {
                    best_d = d;
                    best = j;
                }
            }
            wcss += best_d;
            if assignment[i] != best {
                assignment[i] = best;
                changed = true;
            }
        }
        if let Some(&prev) = wcss_history.last() {
            assert!(
                wcss <= prev + 1e-9 * prev.max(1.0),
                "Lloyd iteration increased WCSS: {prev} -> {wcss}"
            );
        }
        wcss_history.push(wcss);
        if !changed {
            break;
        }

        // Update phase: centers become the arithmetic means.
        let mut sums = vec![[0.0f64; 3]; k];
        let mut counts = vec![0usize; k];
        for (i, p) in points.iter().enumerate() {
            let a = assignment[i];
            sums[a][0] += p[0];
            sums[a][1] += p[1];
            sums[a][2] += p[2];
            counts[a] += 1;
        }
        for j in 0..k {
            if counts[j] > 0 {
                let c = counts[j] as f64;
                centers[j] = [sums[j][0] / c, sums[j][1] / c, sums[j][2] / c];
            }
        }
        // Empty-cluster repair: promote the farthest point to a singleton.
        for j in 0..k {
            if counts[j] == 0 {
                let mut far_i = 0;
                let mut far_d = -1.0;
                for (i, p) in points.iter().enumerate() {
                    if counts[assignment[i]] <= 1 {
                        continue; // do not strand another cluster
                    }
                    let d = dist_sq(p, &centers[assignment[i]]);
                    if d > far_d {
                        far_d = d;
                        far_i = i;
                    }
                }
                counts[assignment[far_i]] -= 1;
                assignment[far_i] = j;
                counts[j] = 1;
                centers[j] = points[far_i];
            }
        }
    }
    LloydResult { centers, assignment, wcss_history }
}

const KMEANS_RESTARTS: u64 = 10;

/// Best of several Lloyd runs (by final WCSS) from deterministic
/// k-means++ seedings derived from one seed.
pub(crate) fn best_lloyd(points: &[[f64; 3]], k: usize, seed: u64) -> LloydResult {
    let mut best: Option<(f64, LloydResult)> = None;
    for restart in 0..KMEANS_RESTARTS {
        let sub_seed = seed.wrapping_mul(0x9e3779b97f4a7c15).wrapping_add(restart);
        let result = lloyd(points, k, sub_seed, 300);
        let wcss = *result.wcss_history.last().expect("at least one iteration");
        if best.as_ref().map_or(true, |(b, _)| wcss < *b) {
            best = Some((wcss, result));
        }
    }
    best.expect("restarts ran").1
}

/// K-means candidate selection in 3-D RGB space over unit illuminants.
/// Lloyd's algorithm runs from several deterministic k-means++ seedings
/// and the restart with the lowest within-cluster sum of squares wins.
/// Cluster centers are re-normalized to unit length; duplicates closer
/// than 1e-6 degrees are merged, so the achieved count may be below `k`.
pub fn kmeans_candidates(illuminants: &[UnitRgb], k: usize, seed: u64) -> Result<CandidateSet> {
    if illuminants.is_empty() {
        return Err(Error::EmptyInput("kmeans_candidates"));
    }
    let points: Vec<[f64; 3]> = illuminants.iter().map(|u| u.as_array()).collect();
    let distinct = count_distinct(&points);
    if k == 0 || k > distinct {
        return Err(Error::TooFewDistinctPoints { k, distinct });
    }
    let result = best_lloyd(&points, k, seed);
    let mut candidates: Vec<UnitRgb> = Vec::with_capacity(k);
    for c in &result.centers {
        let u = UnitRgb::from_array(*c)?;
        if candidates.iter().all(|q| angular_error_deg(q, &u) > 1e-6) {
            candidates.push(u);
        }
    }
    Ok(CandidateSet {
        camera_id: String::new(),
        candidates,
        selection_method: SelectionMethod::KMeans,
        seed,
    })
}

// ---------------------------------------------------------------------------
// Uniform grid
// ---------------------------------------------------------------------------

/// Lays a `grid_side` x `grid_side` lattice over the chroma bounding box of
/// the input illuminants (extrema inclusive) and lifts each lattice point
/// back through (rg, 1, bg) normalization.
pub fn uniform_candidates(illuminants: &[UnitRgb], grid_side: usize) -> Result<CandidateSet> {
    if illuminants.is_empty() {
        return Err(Error::EmptyInput("uniform_candidates"));
    }
    assert!(grid_side >= 2, "uniform_candidates requires grid_side >= 2");
    let chromas: Vec<ChromaPoint> =
        illuminants.iter().map(chroma).collect::<Result<_>>()?;
    let rg_min = chromas.iter().map(|p| p.rg).fold(f64::INFINITY, f64::min);
    let rg_max = chromas.iter().map(|p| p.rg).fold(f64::NEG_INFINITY, f64::max);
    let bg_min = chromas.iter().map(|p| p.bg).fold(f64::INFINITY, f64::min);
    let bg_max = chromas.iter().map(|p| p.bg).fold(f64::NEG_INFINITY, f64::max);
    if rg_max - rg_min < 1e-9 {
        return Err(Error::DegenerateExtent { axis: "r/g", span: rg_max - rg_min });
    }
    if bg_max - bg_min < 1e-9 {
        return Err(Error::DegenerateExtent { axis: "b/g", span: bg_max - bg_min });
    }
    let step = 1.0 / (grid_side - 1) as f64;
    let mut candidates = Vec::with_capacity(grid_side * grid_side);
    for i in 0..grid_side {
        let rg = rg_min + (rg_max - rg_min) * (i as f64 * step);
        for j in 0..grid_side {
            let bg = bg_min + (bg_max - bg_min) * (j as f64 * step);
            let u = inverse_chroma(&ChromaPoint { rg, bg })?;
            if candidates.iter().all(|q| angular_error_deg(q, &u) > 1e-6) {
                candidates.push(u);
            }
        }
    }
    Ok(CandidateSet {
        camera_id: String::new(),
        candidates,
        selection_method: SelectionMethod::UniformGrid,
        seed: 0,
    })
}

// ---------------------------------------------------------------------------
// Gaussian mixture sampling
// ---------------------------------------------------------------------------

pub(crate) struct GmmModel {
    pub weights: Vec<f64>,
    pub means: Vec<[f64; 2]>,
    pub covs: Vec<[[f64; 2]; 2]>,
    // Diagnostic consumed by the EM monotonicity test.
    #[allow(dead_code)]
    pub loglik_history: Vec<f64>,
}

fn log_gauss_2d(x: &[f64; 2], mean: &[f64; 2], cov: &[[f64; 2]; 2]) -> Result<f64> {
    let det = cov[0][0] * cov[1][1] - cov[0][1] * cov[1][0];
    if det <= 0.0 || !det.is_finite() {
        return Err(Error::DegenerateComponent(format!("covariance determinant {det}")));
    }
    let inv = [
        [cov[1][1] / det, -cov[0][1] / det],
        [-cov[1][0] / det, cov[0][0] / det],
    ];
    let dx = [x[0] - mean[0], x[1] - mean[1]];
    let quad = dx[0] * (inv[0][0] * dx[0] + inv[0][1] * dx[1])
        + dx[1] * (inv[1][0] * dx[0] + inv[1][1] * dx[1]);
    Ok(-(2.0 * std::f64::consts::PI).ln() - 0.5 * det.ln() - 0.5 * quad)
}

fn logsumexp(values: &[f64]) -> f64 {
    let m = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + values.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

const COV_FLOOR: f64 = 1e-6;

/// Full-covariance EM in chroma space with k-means++ initialization of the
/// means. The log-likelihood must be non-decreasing; a decrease beyond the
/// tolerance signals an implementation bug and is surfaced as an error.
pub(crate) fn fit_gmm(
    chromas: &[[f64; 2]],
    n_components: usize,
    seed: u64,
    max_iters: usize,
) -> Result<GmmModel> {
    let n = chromas.len();
    let k = n_components;
    assert!(k >= 1 && n >= k);

    // k-means++ init on the chroma points (embedded in 3-D with z = 0 to
    // reuse the seeding routine).
    let embedded: Vec<[f64; 3]> = chromas.iter().map(|c| [c[0], c[1], 0.0]).collect();
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let init = kmeans_pp_init(&embedded, k, &mut rng);
    let mut means: Vec<[f64; 2]> = init.iter().map(|c| [c[0], c[1]]).collect();

    // Global covariance (floored) as the shared starting covariance.
    let gm = [
        chromas.iter().map(|c| c[0]).sum::<f64>() / n as f64,
        chromas.iter().map(|c| c[1]).sum::<f64>() / n as f64,
    ];
    let mut g_cov = [[0.0f64; 2]; 2];
    for c in chromas {
        let dx = [c[0] - gm[0], c[1] - gm[1]];
        g_cov[0][0] += dx[0] * dx[0];
        g_cov[0][1] += dx[0] * dx[1];
        g_cov[1][0] += dx[1] * dx[0];
        g_cov[1][1] += dx[1] * dx[1];
    }
    for row in g_cov.iter_mut() {
        for v in row.iter_mut() {
            *v /= n as f64;
        }
    }
    g_cov[0][0] += COV_FLOOR;
    g_cov[1][1] += COV_FLOOR;

    let mut covs = vec![g_cov; k];
    let mut weights = vec![1.0 / k as f64; k];
    let mut loglik_history: Vec<f64> = Vec::new();
    let mut resp = vec![vec![0.0f64; k]; n];

    for iter in 0..max_iters {
        // E step.
        let mut ll = 0.0;
        for (i, x) in chromas.iter().enumerate() {
            let mut logs = Vec::with_capacity(k);
            for j in 0..k {
                logs.push(weights[j].ln() + log_gauss_2d(x, &means[j], &covs[j])?);
            }
            let norm = logsumexp(&logs);
            ll += norm;
            for j in 0..k {
                resp[i][j] = (logs[j] - norm).exp();
            }
        }
        if let Some(&prev) = loglik_history.last() {
            let drop = prev - ll;
            if drop > 1e-9 * prev.abs().max(1.0) {
                return Err(Error::EmDidNotConverge { iteration: iter, drop });
            }
            if (ll - prev).abs() < 1e-10 * (1.0 + prev.abs()) {
                loglik_history.push(ll);
                break;
            }
        }
        loglik_history.push(ll);

        // M step.
        for j in 0..k {
            let nj: f64 = (0..n).map(|i| resp[i][j]).sum();
            if nj < 1e-12 {
                return Err(Error::DegenerateComponent(format!(
                    "component {j} lost all responsibility"
                )));
            }
            weights[j] = nj / n as f64;
            let mut mu = [0.0f64; 2];
            for (i, x) in chromas.iter().enumerate() {
                mu[0] += resp[i][j] * x[0];
                mu[1] += resp[i][j] * x[1];
            }
            mu[0] /= nj;
            mu[1] /= nj;
            means[j] = mu;
            let mut cov = [[0.0f64; 2]; 2];
            for (i, x) in chromas.iter().enumerate() {
                let dx = [x[0] - mu[0], x[1] - mu[1]];
                cov[0][0] += resp[i][j] * dx[0] * dx[0];
                cov[0][1] += resp[i][j] * dx[0] * dx[1];
                cov[1][0] += resp[i][j] * dx[1] * dx[0];
                cov[1][1] += resp[i][j] * dx[1] * dx[1];
            }
            for row in cov.iter_mut() {
                for v in row.iter_mut() {
                    *v /= nj;
                }
            }
            // Additive diagonal floor: keeps near-colinear components
            // positive definite, not merely nonnegative.
            cov[0][0] += COV_FLOOR;
            cov[1][1] += COV_FLOOR;
            covs[j] = cov;
        }
    }
    Ok(GmmModel { weights, means, covs, loglik_history })
}

/// Fits a GMM to the illuminant chromas and draws `n_samples` candidates
/// from it. Samples landing at non-positive chroma (which cannot be lifted
/// back to a physical illuminant) are re-drawn, up to 1000 retries total.
pub fn gmm_candidates(
    illuminants: &[UnitRgb],
    n_components: usize,
    n_samples: usize,
    seed: u64,
) -> Result<CandidateSet> {
    if illuminants.is_empty() {
        return Err(Error::EmptyInput("gmm_candidates"));
    }
    if n_components == 0 || illuminants.len() < n_components {
        return Err(Error::TooFewDistinctPoints {
            k: n_components,
            distinct: illuminants.len(),
        });
    }
    assert!(n_samples >= 1);
    let chromas: Vec<[f64; 2]> = illuminants
        .iter()
        .map(|u| chroma(u).map(|p| [p.rg, p.bg]))
        .collect::<Result<_>>()?;
    let model = fit_gmm(&chromas, n_components, seed, 100)?;

    // Cholesky factors for sampling.
    let mut chols = Vec::with_capacity(n_components);
    for cov in &model.covs {
        let l11 = cov[0][0].sqrt();
        let l21 = cov[0][1] / l11;
        let rest = cov[1][1] - l21 * l21;
        if !(rest > 0.0) {
            return Err(Error::DegenerateComponent(format!(
                "covariance not positive definite: schur complement {rest}"
            )));
        }
        chols.push([l11, l21, rest.sqrt()]);
    }

    let mut rng = ChaCha12Rng::seed_from_u64(seed.wrapping_add(1));
    let mut candidates: Vec<UnitRgb> = Vec::with_capacity(n_samples);
    let mut retries = 0usize;
    while candidates.len() < n_samples {
        let u: f64 = rng.random();
        let mut comp = n_components - 1;
        let mut acc = 0.0;
        for (j, w) in model.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                comp = j;
                break;
            }
        }
        let z0: f64 = rng.sample(StandardNormal);
        let z1: f64 = rng.sample(StandardNormal);
        let [l11, l21, l22] = chols[comp];
        let rg = model.means[comp][0] + l11 * z0;
        let bg = model.means[comp][1] + l21 * z0 + l22 * z1;
        let ok = rg > 0.0 && bg > 0.0;
        let cand = if ok { inverse_chroma(&ChromaPoint { rg, bg }).ok() } else { None };
        let fresh = cand
            .filter(|c| candidates.iter().all(|q| angular_error_deg(q, c) > 1e-6));
        match fresh {
            Some(c) => candidates.push(c),
            None => {
                retries += 1;
                if retries > 1000 {
                    return Err(Error::DegenerateComponent(
                        "exhausted 1000 retries drawing positive-chroma samples".into(),
                    ));
                }
            }
        }
    }
    Ok(CandidateSet {
        camera_id: String::new(),
        candidates,
        selection_method: SelectionMethod::GmmSample,
        seed,
    })
}

// ---------------------------------------------------------------------------
// Quantization floor
// ---------------------------------------------------------------------------

/// Best achievable error statistics if an estimator always returned the
/// nearest candidate: for each ground truth, the minimum angular error over
/// the candidate set.
pub fn quantization_floor(cands: &CandidateSet, truths: &[UnitRgb]) -> Result<ErrorStats> {
    if cands.is_empty() {
        return Err(Error::EmptyInput("quantization_floor: candidates"));
    }
    if truths.is_empty() {
        return Err(Error::EmptyInput("quantization_floor: truths"));
    }
    let errors: Vec<f64> = truths
        .iter()
        .map(|t| {
            cands
                .candidates
                .iter()
                .map(|c| angular_error_deg(c, t))
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    error_stats(&errors)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::color::normalize_illuminant;

    fn random_units(n: usize, rng: &mut ChaCha12Rng) -> Vec<UnitRgb> {
        (0..n)
            .map(|_| {
                normalize_illuminant([
                    0.05 + rng.random::<f64>(),
                    0.05 + rng.random::<f64>(),
                    0.05 + rng.random::<f64>(),
                ])
                .unwrap()
            })
            .collect()
    }

    #[test]
    fn kmeans_k_equals_distinct_returns_inputs() {
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let inputs = random_units(6, &mut rng);
        let set = kmeans_candidates(&inputs, 6, 42).unwrap();
        assert_eq!(set.len(), 6);
        for inp in &inputs {
            let hit = set
                .candidates
                .iter()
                .any(|c| angular_error_deg(c, inp) < 1e-5);
            assert!(hit, "input point missing from k = n clustering");
        }
    }

    #[test]
    fn kmeans_k_one_is_normalized_mean() {
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        let inputs = random_units(10, &mut rng);
        let set = kmeans_candidates(&inputs, 1, 3).unwrap();
        let mut mean = [0.0; 3];
        for u in &inputs {
            let a = u.as_array();
            mean[0] += a[0];
            mean[1] += a[1];
            mean[2] += a[2];
        }
        let expected = normalize_illuminant(mean).unwrap();
        assert!(angular_error_deg(&set.candidates[0], &expected) < 1e-5);
    }

    /// Exhaustive enumeration of cluster assignments for the WCSS oracle.
    fn brute_force_wcss(points: &[[f64; 3]], k: usize) -> f64 {
        let n = points.len();
        let mut best = f64::INFINITY;
        let total = k.pow(n as u32);
        for code in 0..total {
            let mut assign = vec![0usize; n];
            let mut c = code;
            for a in assign.iter_mut() {
                *a = c % k;
                c /= k;
            }
            let mut sums = vec![[0.0f64; 3]; k];
            let mut counts = vec![0usize; k];
            for (i, p) in points.iter().enumerate() {
                let j = assign[i];
                sums[j][0] += p[0];
                sums[j][1] += p[1];
                sums[j][2] += p[2];
                counts[j] += 1;
            }
            let mut wcss = 0.0;
            for (i, p) in points.iter().enumerate() {
                let j = assign[i];
                let cnt = counts[j] as f64;
                let c = [sums[j][0] / cnt, sums[j][1] / cnt, sums[j][2] / cnt];
                wcss += dist_sq(p, &c);
            }
            if wcss < best {
                best = wcss;
            }
        }
        best
    }

    #[test]
    fn kmeans_matches_exhaustive_enumeration_on_small_instance() {
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        let inputs = random_units(8, &mut rng);
        let points: Vec<[f64; 3]> = inputs.iter().map(|u| u.as_array()).collect();
        let result = best_lloyd(&points, 3, 11);
        let lw = *result.wcss_history.last().unwrap();
        let bw = brute_force_wcss(&points, 3);
        assert!(lw >= bw - 1e-12, "Lloyd beat the global optimum: impossible");
        assert!(
            (lw - bw).abs() < 1e-9,
            "Lloyd missed the global optimum on this fixed seed: {lw} vs {bw}"
        );
    }

    #[test]
    fn kmeans_centers_are_means_of_assigned_points() {
        let mut rng = ChaCha12Rng::seed_from_u64(9);
        let inputs = random_units(40, &mut rng);
        let points: Vec<[f64; 3]> = inputs.iter().map(|u| u.as_array()).collect();
        let result = lloyd(&points, 5, 17, 300);
        for j in 0..5 {
            let members: Vec<&[f64; 3]> = points
                .iter()
                .zip(&result.assignment)
                .filter(|(_, &a)| a == j)
                .map(|(p, _)| p)
                .collect();
            assert!(!members.is_empty());
            let m = members.len() as f64;
            for c in 0..3 {
                let mean: f64 = members.iter().map(|p| p[c]).sum::<f64>() / m;
                assert!((mean - result.centers[j][c]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn kmeans_is_deterministic_and_bit_exact_through_json() {
        let mut rng = ChaCha12Rng::seed_from_u64(13);
        let inputs = random_units(50, &mut rng);
        let a = kmeans_candidates(&inputs, 7, 1234).unwrap();
        let b = kmeans_candidates(&inputs, 7, 1234).unwrap();
        assert_eq!(a.to_json(), b.to_json());
        let parsed = CandidateSet::from_json(&a.to_json()).unwrap();
        assert_eq!(parsed.candidates, a.candidates);
        assert_eq!(parsed.seed, a.seed);
    }

    #[test]
    fn kmeans_rejects_bad_k() {
        let w = normalize_illuminant([1.0, 1.0, 1.0]).unwrap();
        let inputs = vec![w, w];
        assert!(matches!(
            kmeans_candidates(&inputs, 2, 0),
            Err(Error::TooFewDistinctPoints { k: 2, distinct: 1 })
        ));
        assert!(matches!(
            kmeans_candidates(&[], 1, 0),
            Err(Error::EmptyInput(_))
        ));
     }

    #[test]
    fn kmeans_candidates_pass_unit_invariants() {
        let mut rng = ChaCha12Rng::seed_from_u64(15);
        let inputs = random_units(60, &mut rng);
        for set in [
            kmeans_candidates(&inputs, 8, 5).unwrap(),
            uniform_candidates(&inputs, 4).unwrap(),
            gmm_candidates(&inputs, 3, 20, 5).unwrap(),
        ] {
            for c in &set.candidates {
                assert!(c.is_valid());
            }
        }
    }

    #[test]
    fn uniform_grid_corners_and_count() {
        let inputs = vec![
            inverse_chroma(&ChromaPoint { rg: 0.5, bg: 0.5 }).unwrap(),
            inverse_chroma(&ChromaPoint { rg: 1.5, bg: 1.5 }).unwrap(),
            inverse_chroma(&ChromaPoint { rg: 1.0, bg: 1.0 }).unwrap(),
        ];
        let set = uniform_candidates(&inputs, 2).unwrap();
        assert_eq!(set.len(), 4);
        for (rg, bg) in [(0.5, 0.5), (0.5, 1.5), (1.5, 0.5), (1.5, 1.5)] {
            let corner = inverse_chroma(&ChromaPoint { rg, bg }).unwrap();
            assert!(set
                .candidates
                .iter()
                .any(|c| angular_error_deg(c, &corner) < 1e-5));
        }
        let set11 = uniform_candidates(&inputs, 11).unwrap();
        assert_eq!(set11.len(), 121);
    }

    #[test]
    fn uniform_grid_stays_inside_bounding_box() {
        let mut rng = ChaCha12Rng::seed_from_u64(30);
        for _ in 0..20 {
            let inputs = random_units(12, &mut rng);
            let set = match uniform_candidates(&inputs, 5) {
                Ok(s) => s,
                Err(Error::GreenUnderflow(_)) => continue,
                Err(e) => panic!("{e}"),
            };
            let chromas: Vec<ChromaPoint> =
                inputs.iter().map(|u| chroma(u).unwrap()).collect();
            let rg_min = chromas.iter().map(|p| p.rg).fold(f64::INFINITY, f64::min);
            let rg_max = chromas.iter().map(|p| p.rg).fold(f64::NEG_INFINITY, f64::max);
            let bg_min = chromas.iter().map(|p| p.bg).fold(f64::INFINITY, f64::min);
            let bg_max = chromas.iter().map(|p| p.bg).fold(f64::NEG_INFINITY, f64::max);
            for c in &set.candidates {
                let p = chroma(c).unwrap();
                assert!(p.rg >= rg_min - 1e-9 && p.rg <= rg_max + 1e-9);
                assert!(p.bg >= bg_min - 1e-9 && p.bg <= bg_max + 1e-9);
            }
        }
    }

    #[test]
    fn uniform_grid_rejects_degenerate_extent() {
        let w = normalize_illuminant([1.0, 1.0, 1.0]).unwrap();
        let inputs = vec![w, w, w];
        assert!(matches!(
            uniform_candidates(&inputs, 3),
            Err(Error::DegenerateExtent { .. })
        ));
    }

    #[test]
    fn gmm_loglik_non_decreasing() {
        let mut rng = ChaCha12Rng::seed_from_u64(44);
        let inputs = random_units(80, &mut rng);
        let chromas: Vec<[f64; 2]> = inputs
            .iter()
            .map(|u| {
                let p = chroma(u).unwrap();
                [p.rg, p.bg]
            })
            .collect();
        let model = fit_gmm(&chromas, 4, 99, 100).unwrap();
        for w in model.loglik_history.windows(2) {
            assert!(
                w[1] >= w[0] - 1e-9 * w[0].abs().max(1.0),
                "EM log-likelihood decreased: {} -> {}",
                w[0],
                w[1]
            );
        }
    }

    #[test]
    fn gmm_single_component_concentrates_on_mean() {
        // Tightly clustered chroma inputs: samples must concentrate near
        // the input mean (within 3 sigma / sqrt(n_samples) per axis).
        let mut rng = ChaCha12Rng::seed_from_u64(50);
        let center = ChromaPoint { rg: 0.8, bg: 0.7 };
        let spread = 0.02;
        let inputs: Vec<UnitRgb> = (0..100)
            .map(|_| {
                inverse_chroma(&ChromaPoint {
                    rg: center.rg + spread * (rng.random::<f64>() - 0.5),
                    bg: center.bg + spread * (rng.random::<f64>() - 0.5),
                })
                .unwrap()
            })
            .collect();
        let n_samples = 200;
        let set = gmm_candidates(&inputs, 1, n_samples, 77).unwrap();
        let mean_in: [f64; 2] = {
            let mut m = [0.0; 2];
            for u in &inputs {
                let p = chroma(u).unwrap();
                m[0] += p.rg;
                m[1] += p.bg;
            }
            [m[0] / inputs.len() as f64, m[1] / inputs.len() as f64]
        };
        let mut mean_out = [0.0; 2];
        for c in &set.candidates {
            let p = chroma(c).unwrap();
            mean_out[0] += p.rg;
            mean_out[1] += p.bg;
        }
        mean_out[0] /= n_samples as f64;
        mean_out[1] /= n_samples as f64;
        let sigma = spread / (12.0f64).sqrt();
        let bound = 3.0 * sigma / (n_samples as f64).sqrt();
        assert!((mean_out[0] - mean_in[0]).abs() < bound, "rg drifted");
        assert!((mean_out[1] - mean_in[1]).abs() < bound, "bg drifted");
    }

    #[test]
    fn gmm_default_shape() {
        let mut rng = ChaCha12Rng::seed_from_u64(60);
        let inputs = random_units(150, &mut rng);
        let set = gmm_candidates(&inputs, 10, 120, 3).unwrap();
        assert_eq!(set.len(), 120);
    }

    #[test]
    fn floor_zero_when_truths_are_candidates() {
        let mut rng = ChaCha12Rng::seed_from_u64(70);
        let inputs = random_units(5, &mut rng);
        let set = CandidateSet {
            camera_id: "c".into(),
            candidates: inputs.clone(),
            selection_method: SelectionMethod::KMeans,
            seed: 0,
        };
        let stats = quantization_floor(&set, &inputs).unwrap();
        // acos amplifies last-bit rounding to ~1e-6 degrees; "zero" means
        // below that amplification level.
        assert!(stats.mean < 1e-5);
        assert!(stats.worst25 < 1e-5);
    }

    #[test]
    fn floor_single_candidate_diagonal() {
        let w = normalize_illuminant([1.0, 1.0, 1.0]).unwrap();
        let set = CandidateSet {
            camera_id: "c".into(),
            candidates: vec![w],
            selection_method: SelectionMethod::KMeans,
            seed: 0,
        };
        let red = normalize_illuminant([1.0, 0.0, 0.0]).unwrap();
        let stats = quantization_floor(&set, &[red]).unwrap();
        assert!((stats.mean - 54.7356).abs() < 1e-3);
    }

    #[test]
    fn floor_non_increasing_with_more_candidates() {
        let mut rng = ChaCha12Rng::seed_from_u64(80);
        let truths = random_units(30, &mut rng);
        let pool = random_units(20, &mut rng);
        let mut prev_mean = f64::INFINITY;
        for take in 1..=20 {
            let set = CandidateSet {
                camera_id: "c".into(),
                candidates: pool[..take].to_vec(),
                selection_method: SelectionMethod::KMeans,
                seed: 0,
            };
            let stats = quantization_floor(&set, &truths).unwrap();
            assert!(stats.mean <= prev_mean + 1e-12);
            prev_mean = stats.mean;
        }
    }

    #[test]
    fn canonical_json_uses_17_significant_digits() {
        let text = canonical_json(&vec![0.1f64]);
        assert_eq!(text, "[1.0000000000000001e-1]");
        let parsed: Vec<f64> = serde_json::from_str(&text).unwrap();
        assert_eq!(parsed[0], 0.1);
    }
}
