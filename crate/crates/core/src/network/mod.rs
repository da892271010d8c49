//! The shallow likelihood network: one 3x3 spatial convolution, two 1x1
//! convolutions, global average pooling, dropout, and three fully
//! connected layers ending in a single linear score.
//!
//! Forward and backward passes are written by hand. Convolutions run as
//! im2col + matrix products; every reduction uses a fixed summation order
//! so results are identical across runs and thread schedules. The type
//! parameter selects f32 (training builds) or f64 (gradient-check builds).

mod checkpoint;
mod fused;

pub use checkpoint::{load_checkpoint, load_conv1_file, save_checkpoint, CheckpointMeta};
pub use fused::{backward_fused, forward_fused, BatchTrace};

use ndarray::{Array1, Array2, Array3, Array4, Axis, NdFloat};
use num_traits::FromPrimitive;
use rand::prelude::*;
use rand_chacha::ChaCha12Rng;
use rand_distr::Normal;
use rayon::prelude::*;

use crate::error::{Error, Result};

/// Float type usable by the network: f32 or f64.
pub trait NetFloat: NdFloat + FromPrimitive + Send + Sync {}
impl NetFloat for f32 {}
impl NetFloat for f64 {}

pub const INPUT_SIZE: usize = 64;
pub const INPUT_PIXELS: usize = INPUT_SIZE * INPUT_SIZE;
const C_IN: usize = 3;
const K1: usize = 64;
const K2: usize = 64;
const K3: usize = 128;
const F1: usize = 64;
const F2: usize = 32;
const PATCH: usize = C_IN * 9;

/// All network weights plus the per-candidate gain/bias heads.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams<F> {
    pub conv1_w: Array4<F>, // [64, 3, 3, 3] = [out, in, ky, kx]
    pub conv1_b: Array1<F>,
    pub conv1_frozen: bool,
    pub conv2_w: Array2<F>, // [64, 64] = [out, in]
    pub conv2_b: Array1<F>,
    pub conv3_w: Array2<F>, // [128, 64]
    pub conv3_b: Array1<F>,
    pub fc1_w: Array2<F>, // [64, 128]
    pub fc1_b: Array1<F>,
    pub fc2_w: Array2<F>, // [32, 64]
    pub fc2_b: Array1<F>,
    pub fc3_w: Array2<F>, // [1, 32]
    pub fc3_b: Array1<F>,
    /// Per-candidate log-likelihood gains, index-aligned with the
    /// candidate set.
    pub gains: Array1<F>,
    /// Per-candidate log-prior biases.
    pub biases: Array1<F>,
    pub rng_seed: u64,
}

impl<F: NetFloat> NetworkParams<F> {
    pub fn n_candidates(&self) -> usize {
        self.gains.len()
    }

    /// CNN weight count excluding conv1 and the heads (the count that
    /// stays trainable when conv1 is frozen).
    pub fn core_param_count(&self) -> usize {
        self.conv2_w.len()
            + self.conv2_b.len()
            + self.conv3_w.len()
            + self.conv3_b.len()
            + self.fc1_w.len()
            + self.fc1_b.len()
            + self.fc2_w.len()
            + self.fc2_b.len()
            + self.fc3_w.len()
            + self.fc3_b.len()
    }

    /// CNN weight count including conv1, still excluding the heads.
    pub fn total_cnn_param_count(&self) -> usize {
        self.core_param_count() + self.conv1_w.len() + self.conv1_b.len()
    }

    pub fn all_finite(&self) -> bool {
        self.conv1_w.iter().all(|v| v.is_finite())
            && self.conv1_b.iter().all(|v| v.is_finite())
            && self.conv2_w.iter().all(|v| v.is_finite())
            && self.conv2_b.iter().all(|v| v.is_finite())
            && self.conv3_w.iter().all(|v| v.is_finite())
            && self.conv3_b.iter().all(|v| v.is_finite())
            && self.fc1_w.iter().all(|v| v.is_finite())
            && self.fc1_b.iter().all(|v| v.is_finite())
            && self.fc2_w.iter().all(|v| v.is_finite())
            && self.fc2_b.iter().all(|v| v.is_finite())
            && self.fc3_w.iter().all(|v| v.is_finite())
            && self.fc3_b.iter().all(|v| v.is_finite())
            && self.gains.iter().all(|v| v.is_finite())
            && self.biases.iter().all(|v| v.is_finite())
    }
}

fn he_normal<F: NetFloat>(
    rng: &mut ChaCha12Rng,
    fan_in: usize,
    n: usize,
) -> Vec<F> {
    let std = (2.0 / fan_in as f64).sqrt();
    let dist = Normal::new(0.0, std).expect("std is positive");
    (0..n)
        .map(|_| F::from_f64(dist.sample(rng)).expect("sample fits"))
        .collect()
}

/// Initializes parameters. `conv1_weights`, when given, points at a
/// tensor container holding `conv1.weight` [64,3,3,3] and `conv1.bias`
/// [64]; otherwise conv1 is He-initialized like every other layer. conv1
/// starts frozen; clear `conv1_frozen` to fine-tune it.
pub fn init_params<F: NetFloat>(
    seed: u64,
    n_candidates: usize,
    conv1_weights: Option<&std::path::Path>,
) -> Result<NetworkParams<F>> {
    assert!(n_candidates >= 1);
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    // Draw order is fixed: conv1, conv2, conv3, fc1, fc2, fc3.
    let conv1_rand = he_normal::<F>(&mut rng, C_IN * 9, K1 * C_IN * 9);
    let conv2 = he_normal::<F>(&mut rng, K1, K2 * K1);
    let conv3 = he_normal::<F>(&mut rng, K2, K3 * K2);
    let fc1 = he_normal::<F>(&mut rng, K3, F1 * K3);
    let fc2 = he_normal::<F>(&mut rng, F1, F2 * F1);
    let fc3 = he_normal::<F>(&mut rng, F2, F2);

    let (conv1_w, conv1_b) = match conv1_weights {
        Some(path) => {
            let (w, b) = load_conv1_file(path)?;
            (
                w.mapv(|v| F::from_f32(v).expect("fits")),
                b.mapv(|v| F::from_f32(v).expect("fits")),
            )
        }
        None => (
            Array4::from_shape_vec((K1, C_IN, 3, 3), conv1_rand).expect("shape"),
            Array1::zeros(K1),
        ),
    };

    Ok(NetworkParams {
        conv1_w,
        conv1_b,
        conv1_frozen: true,
        conv2_w: Array2::from_shape_vec((K2, K1), conv2).expect("shape"),
        conv2_b: Array1::zeros(K2),
        conv3_w: Array2::from_shape_vec((K3, K2), conv3).expect("shape"),
        conv3_b: Array1::zeros(K3),
        fc1_w: Array2::from_shape_vec((F1, K3), fc1).expect("shape"),
        fc1_b: Array1::zeros(F1),
        fc2_w: Array2::from_shape_vec((F2, F1), fc2).expect("shape"),
        fc2_b: Array1::zeros(F2),
        fc3_w: Array2::from_shape_vec((1, F2), fc3).expect("shape"),
        fc3_b: Array1::zeros(1),
        gains: Array1::ones(n_candidates),
        biases: Array1::zeros(n_candidates),
        rng_seed: seed,
    })
}

/// Cached activations from one forward pass, as needed by backward.
#[derive(Debug, Clone)]
pub struct ForwardTrace<F> {
    input: Array3<F>,
    a1: Array2<F>,
    a2: Array2<F>,
    a3: Array2<F>,
    pooled: Array1<F>,
    dropout_mask: Option<Array1<F>>,
    h: Array1<F>,
    f1: Array1<F>,
    f2: Array1<F>,
    pub score: F,
}

impl<F> ForwardTrace<F> {
    /// The 128-vector after global average pooling, before dropout.
    pub fn pooled(&self) -> &Array1<F> {
        &self.pooled
    }

    /// The inverted dropout mask (entries 0 or 1/keep); present only for
    /// training-mode traces.
    pub fn dropout_mask(&self) -> Option<&Array1<F>> {
        self.dropout_mask.as_ref()
    }
}

impl<F: NetFloat> ForwardTrace<F> {
    /// True when both traces activate the same ReLU units everywhere.
    /// Central finite differences are only meaningful when the two
    /// endpoint evaluations stay on one linear piece; a sign flip between
    /// them puts a kink inside the difference interval.
    pub fn relu_masks_equal(&self, other: &ForwardTrace<F>) -> bool {
        let same = |a: &F, b: &F| (*a > F::zero()) == (*b > F::zero());
        self.a1.iter().zip(other.a1.iter()).all(|(a, b)| same(a, b))
            && self.a2.iter().zip(other.a2.iter()).all(|(a, b)| same(a, b))
            && self.a3.iter().zip(other.a3.iter()).all(|(a, b)| same(a, b))
            && self.f1.iter().zip(other.f1.iter()).all(|(a, b)| same(a, b))
            && self.f2.iter().zip(other.f2.iter()).all(|(a, b)| same(a, b))
    }
}

/// Zero-padded im2col for the 3x3 convolution: rows are pixels in scan
/// order, columns are (channel, ky, kx) in conv1 weight order.
fn im2col<F: NetFloat>(x: &Array3<F>) -> Array2<F> {
    let s = INPUT_SIZE;
    let mut cols = Array2::zeros((s * s, PATCH));
    for y in 0..s {
        for x_pos in 0..s {
            let row = y * s + x_pos;
            for c in 0..C_IN {
                for ky in 0..3usize {
                    let iy = y as isize + ky as isize - 1;
                    if iy < 0 || iy >= s as isize {
                        continue;
                    }
                    for kx in 0..3usize {
                        let ix = x_pos as isize + kx as isize - 1;
                        if ix < 0 || ix >= s as isize {
                            continue;
                        }
                        cols[(row, c * 9 + ky * 3 + kx)] = x[(iy as usize, ix as usize, c)];
                    }
                }
            }
        }
    }
    cols
}

fn relu_inplace<F: NetFloat>(a: &mut Array2<F>) {
    a.mapv_inplace(|v| if v > F::zero() { v } else { F::zero() });
}

fn relu_vec_inplace<F: NetFloat>(a: &mut Array1<F>) {
    a.mapv_inplace(|v| if v > F::zero() { v } else { F::zero() });
}

fn mat_vec<F: NetFloat>(w: &Array2<F>, x: &Array1<F>, b: &Array1<F>) -> Array1<F> {
    let mut out = w.dot(x);
    out += b;
    out
}

/// One forward pass producing the scalar log-likelihood score and the
/// trace required by `backward`. In training mode an inverted dropout
/// mask is drawn from `rng` and applied after pooling; evaluation mode
/// ignores the rng entirely and is fully deterministic.
pub fn forward<F: NetFloat>(
    params: &NetworkParams<F>,
    x: &Array3<F>,
    training: bool,
    dropout_p: f64,
    rng: &mut ChaCha12Rng,
) -> Result<(F, ForwardTrace<F>)> {
    assert_eq!(x.dim(), (INPUT_SIZE, INPUT_SIZE, C_IN), "network input must be 64x64x3");
    let cols = im2col(x);
    let w1 = params
        .conv1_w
        .to_shape((K1, PATCH))
        .expect("conv1 weights are contiguous");
    let mut a1 = cols.dot(&w1.t());
    a1 += &params.conv1_b;
    relu_inplace(&mut a1);

    let mut a2 = a1.dot(&params.conv2_w.t());
    a2 += &params.conv2_b;
    relu_inplace(&mut a2);

    let mut a3 = a2.dot(&params.conv3_w.t());
    a3 += &params.conv3_b;
    relu_inplace(&mut a3);

    let pooled = a3.mean_axis(Axis(0)).expect("spatial axis is non-empty");

    let (h, dropout_mask) = if training && dropout_p > 0.0 {
        let keep = 1.0 - dropout_p;
        let scale = F::from_f64(1.0 / keep).expect("fits");
        let mask = Array1::from_iter(
            (0..K3).map(|_| if rng.random::<f64>() < keep { scale } else { F::zero() }),
        );
        (&pooled * &mask, Some(mask))
    } else {
        (pooled.clone(), None)
    };

    let mut f1 = mat_vec(&params.fc1_w, &h, &params.fc1_b);
    relu_vec_inplace(&mut f1);
    let mut f2 = mat_vec(&params.fc2_w, &f1, &params.fc2_b);
    relu_vec_inplace(&mut f2);
    let score = params.fc3_w.row(0).dot(&f2) + params.fc3_b[0];

    if !score.is_finite() || pooled.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteActivation { layer: "network" });
    }

    Ok((
        score,
        ForwardTrace {
            input: x.clone(),
            a1,
            a2,
            a3,
            pooled,
            dropout_mask,
            h,
            f1,
            f2,
            score,
        },
    ))
}

/// Scores a batch. Equivalent to elementwise `forward` with independent
/// per-item dropout masks; items are seeded up front so the result does
/// not depend on the parallel schedule.
pub fn forward_batch<F: NetFloat>(
    params: &NetworkParams<F>,
    xs: &[Array3<F>],
    training: bool,
    dropout_p: f64,
    rng: &mut ChaCha12Rng,
) -> Result<(Vec<F>, Vec<ForwardTrace<F>>)> {
    if xs.is_empty() {
        return Err(Error::EmptyInput("forward_batch"));
    }
    let seeds: Vec<u64> = (0..xs.len()).map(|_| rng.random()).collect();
    let results: Vec<Result<(F, ForwardTrace<F>)>> = xs
        .par_iter()
        .zip(seeds.par_iter())
        .map(|(x, &seed)| {
            let mut item_rng = ChaCha12Rng::seed_from_u64(seed);
            forward(params, x, training, dropout_p, &mut item_rng)
        })
        .collect();
    let mut scores = Vec::with_capacity(xs.len());
    let mut traces = Vec::with_capacity(xs.len());
    for r in results {
        let (s, t) = r?;
        scores.push(s);
        traces.push(t);
    }
    Ok((scores, traces))
}

/// Gradients for every parameter tensor, shaped exactly like the
/// parameters. Frozen layers receive zeros. The `gains`/`biases` slots
/// are accumulation hooks filled by the training loop (the network alone
/// cannot see which candidate a score belongs to).
#[derive(Debug, Clone)]
pub struct Gradients<F> {
    pub conv1_w: Array4<F>,
    pub conv1_b: Array1<F>,
    pub conv2_w: Array2<F>,
    pub conv2_b: Array1<F>,
    pub conv3_w: Array2<F>,
    pub conv3_b: Array1<F>,
    pub fc1_w: Array2<F>,
    pub fc1_b: Array1<F>,
    pub fc2_w: Array2<F>,
    pub fc2_b: Array1<F>,
    pub fc3_w: Array2<F>,
    pub fc3_b: Array1<F>,
    pub gains: Array1<F>,
    pub biases: Array1<F>,
}

impl<F: NetFloat> Gradients<F> {
    pub fn zeros(n_candidates: usize) -> Self {
        Gradients {
            conv1_w: Array4::zeros((K1, C_IN, 3, 3)),
            conv1_b: Array1::zeros(K1),
            conv2_w: Array2::zeros((K2, K1)),
            conv2_b: Array1::zeros(K2),
            conv3_w: Array2::zeros((K3, K2)),
            conv3_b: Array1::zeros(K3),
            fc1_w: Array2::zeros((F1, K3)),
            fc1_b: Array1::zeros(F1),
            fc2_w: Array2::zeros((F2, F1)),
            fc2_b: Array1::zeros(F2),
            fc3_w: Array2::zeros((1, F2)),
            fc3_b: Array1::zeros(1),
            gains: Array1::zeros(n_candidates),
            biases: Array1::zeros(n_candidates),
        }
    }

    pub fn add_assign(&mut self, other: &Gradients<F>) {
        self.conv1_w += &other.conv1_w;
        self.conv1_b += &other.conv1_b;
        self.conv2_w += &other.conv2_w;
        self.conv2_b += &other.conv2_b;
        self.conv3_w += &other.conv3_w;
        self.conv3_b += &other.conv3_b;
        self.fc1_w += &other.fc1_w;
        self.fc1_b += &other.fc1_b;
        self.fc2_w += &other.fc2_w;
        self.fc2_b += &other.fc2_b;
        self.fc3_w += &other.fc3_w;
        self.fc3_b += &other.fc3_b;
        self.gains += &other.gains;
        self.biases += &other.biases;
    }

    pub fn scale(&mut self, s: F) {
        self.conv1_w *= s;
        self.conv1_b *= s;
        self.conv2_w *= s;
        self.conv2_b *= s;
        self.conv3_w *= s;
        self.conv3_b *= s;
        self.fc1_w *= s;
        self.fc1_b *= s;
        self.fc2_w *= s;
        self.fc2_b *= s;
        self.fc3_w *= s;
        self.fc3_b *= s;
        self.gains *= s;
        self.biases *= s;
    }

    pub fn all_finite(&self) -> bool {
        self.conv2_w.iter().all(|v| v.is_finite())
            && self.conv3_w.iter().all(|v| v.is_finite())
            && self.fc1_w.iter().all(|v| v.is_finite())
            && self.fc2_w.iter().all(|v| v.is_finite())
            && self.fc3_w.iter().all(|v| v.is_finite())
            && self.gains.iter().all(|v| v.is_finite())
            && self.biases.iter().all(|v| v.is_finite())
    }
}

struct LayerGrads<F> {
    conv1_w: Option<Array2<F>>, // [64, 27]; None when conv1 is frozen
    conv1_b: Option<Array1<F>>,
    conv2_w: Array2<F>,
    conv2_b: Array1<F>,
    conv3_w: Array2<F>,
    conv3_b: Array1<F>,
    fc1_w: Array2<F>,
    fc1_b: Array1<F>,
    fc2_w: Array2<F>,
    fc2_b: Array1<F>,
    fc3_w: Array2<F>,
    fc3_b: Array1<F>,
}

/// Reverse pass through one trace. Returns per-layer gradients and,
/// when requested, the gradient with respect to the input image.
fn backprop_one<F: NetFloat>(
    params: &NetworkParams<F>,
    trace: &ForwardTrace<F>,
    d_score: F,
    want_conv1: bool,
    want_input: bool,
) -> (LayerGrads<F>, Option<Array3<F>>) {
    let n_pix = F::from_usize(INPUT_PIXELS).expect("fits");

    // fc3 (linear head)
    let fc3_w = {
        let mut g = Array2::zeros((1, F2));
        g.row_mut(0).assign(&(&trace.f2 * d_score));
        g
    };
    let fc3_b = Array1::from_elem(1, d_score);
    let mut d_f2 = params.fc3_w.row(0).to_owned() * d_score;
    zip_relu_mask(&mut d_f2, &trace.f2);

    // fc2
    let fc2_w = outer(&d_f2, &trace.f1);
    let fc2_b = d_f2.clone();
    let mut d_f1 = params.fc2_w.t().dot(&d_f2);
    zip_relu_mask(&mut d_f1, &trace.f1);

    // fc1
    let fc1_w = outer(&d_f1, &trace.h);
    let fc1_b = d_f1.clone();
    let d_h = params.fc1_w.t().dot(&d_f1);

    // dropout then average pooling: every spatial cell shares d_pooled / n
    let d_pooled = match &trace.dropout_mask {
        Some(mask) => &d_h * mask,
        None => d_h,
    };
    let d_cell = d_pooled.mapv(|v| v / n_pix);

    // conv3: d_a3 = broadcast(d_cell) masked by relu
    let mut d_a3 = Array2::zeros((INPUT_PIXELS, K3));
    for mut row in d_a3.rows_mut() {
        row.assign(&d_cell);
    }
    mask_relu2(&mut d_a3, &trace.a3);
    let conv3_w = d_a3.t().dot(&trace.a2);
    let conv3_b = d_a3.sum_axis(Axis(0));
    let mut d_a2 = d_a3.dot(&params.conv3_w);
    mask_relu2(&mut d_a2, &trace.a2);

    // conv2
    let conv2_w = d_a2.t().dot(&trace.a1);
    let conv2_b = d_a2.sum_axis(Axis(0));
    let mut d_a1 = d_a2.dot(&params.conv2_w);
    mask_relu2(&mut d_a1, &trace.a1);

    // conv1 (only when needed: frozen layers receive zero gradients)
    let (conv1_w, conv1_b) = if want_conv1 {
        let cols = im2col(&trace.input);
        (Some(d_a1.t().dot(&cols)), Some(d_a1.sum_axis(Axis(0))))
    } else {
        (None, None)
    };

    let d_input = if want_input {
        let w1 = params
            .conv1_w
            .to_shape((K1, PATCH))
            .expect("conv1 weights are contiguous");
        let d_cols = d_a1.dot(&w1); // [4096, 27]
        let mut dx = Array3::zeros((INPUT_SIZE, INPUT_SIZE, C_IN));
        let s = INPUT_SIZE;
        for y in 0..s {
            for x_pos in 0..s {
                let row = y * s + x_pos;
                for c in 0..C_IN {
                    for ky in 0..3usize {
                        let iy = y as isize + ky as isize - 1;
                        if iy < 0 || iy >= s as isize {
                            continue;
                        }
                        for kx in 0..3usize {
                            let ix = x_pos as isize + kx as isize - 1;
                            if ix < 0 || ix >= s as isize {
                                continue;
                            }
                            dx[(iy as usize, ix as usize, c)] =
                                dx[(iy as usize, ix as usize, c)]
                                    + d_cols[(row, c * 9 + ky * 3 + kx)];
                        }
                    }
                }
            }
        }
        Some(dx)
    } else {
        None
    };

    (
        LayerGrads {
            conv1_w,
            conv1_b,
            conv2_w,
            conv2_b,
            conv3_w,
            conv3_b,
            fc1_w,
            fc1_b,
            fc2_w,
            fc2_b,
            fc3_w,
            fc3_b,
        },
        d_input,
    )
}

fn outer<F: NetFloat>(a: &Array1<F>, b: &Array1<F>) -> Array2<F> {
    let mut out = Array2::zeros((a.len(), b.len()));
    for (i, &ai) in a.iter().enumerate() {
        if ai == F::zero() {
            continue;
        }
        let mut row = out.row_mut(i);
        for (j, &bj) in b.iter().enumerate() {
            row[j] = ai * bj;
        }
    }
    out
}

fn zip_relu_mask<F: NetFloat>(grad: &mut Array1<F>, post: &Array1<F>) {
    for (g, p) in grad.iter_mut().zip(post.iter()) {
        if *p <= F::zero() {
            *g = F::zero();
        }
    }
}

fn mask_relu2<F: NetFloat>(grad: &mut Array2<F>, post: &Array2<F>) {
    for (g, p) in grad.iter_mut().zip(post.iter()) {
        if *p <= F::zero() {
            *g = F::zero();
        }
    }
}

/// Accumulates parameter gradients over a set of traces given the loss
/// gradient with respect to each trace's score. Traces are reduced in
/// index order; items may be processed in parallel but the result is
/// schedule-independent. Head gradient slots stay zero here — the
/// training loop fills them from the posterior chain.
pub fn backward<F: NetFloat>(
    params: &NetworkParams<F>,
    traces: &[ForwardTrace<F>],
    d_scores: &[F],
) -> Result<Gradients<F>> {
    if traces.len() != d_scores.len() {
        return Err(Error::LengthMismatch {
            what: "backward traces vs d_scores",
            left: traces.len(),
            right: d_scores.len(),
        });
    }
    for t in traces {
        if t.a1.dim() != (INPUT_PIXELS, K1) || t.a3.dim() != (INPUT_PIXELS, K3) {
            return Err(Error::TraceMismatch(format!(
                "trace activations {:?}/{:?} do not match the architecture",
                t.a1.dim(),
                t.a3.dim()
            )));
        }
    }
    let want_conv1 = !params.conv1_frozen;
    let per_trace: Vec<LayerGrads<F>> = traces
        .par_iter()
        .zip(d_scores.par_iter())
        .map(|(t, &g)| backprop_one(params, t, g, want_conv1, false).0)
        .collect();

    let mut total = Gradients::zeros(params.n_candidates());
    for lg in per_trace {
        if let (Some(w), Some(b)) = (&lg.conv1_w, &lg.conv1_b) {
            let w4 = w.to_shape((K1, C_IN, 3, 3)).expect("contiguous");
            total.conv1_w += &w4;
            total.conv1_b += b;
        }
        total.conv2_w += &lg.conv2_w;
        total.conv2_b += &lg.conv2_b;
        total.conv3_w += &lg.conv3_w;
        total.conv3_b += &lg.conv3_b;
        total.fc1_w += &lg.fc1_w;
        total.fc1_b += &lg.fc1_b;
        total.fc2_w += &lg.fc2_w;
        total.fc2_b += &lg.fc2_b;
        total.fc3_w += &lg.fc3_w;
        total.fc3_b += &lg.fc3_b;
    }
    Ok(total)
}

/// Gradient of one score with respect to the input image; the analytic
/// counterpart of finite differences over input pixels.
pub fn input_gradient<F: NetFloat>(
    params: &NetworkParams<F>,
    trace: &ForwardTrace<F>,
    d_score: F,
) -> Array3<F> {
    backprop_one(params, trace, d_score, false, true)
        .1
        .expect("input gradient requested")
}
