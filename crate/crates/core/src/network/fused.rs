//! Batched forward/backward over a whole candidate set: all inputs share
//! one im2col matrix so each layer runs as a single matrix product, and
//! weight-gradient accumulation over the batch happens inside the product
//! itself (fixed summation order, schedule-independent).
//!
//! This is the training/inference hot path. It computes the same function
//! as the per-item [`forward`](super::forward)/[`backward`](super::backward)
//! pair, which stay as the reference implementation.

use ndarray::{s, Array1, Array2, Array3, Axis};
use rand::Rng;
use rand_chacha::ChaCha12Rng;

use crate::error::{Error, Result};

use super::{Gradients, NetFloat, NetworkParams, C_IN, F2, INPUT_PIXELS, INPUT_SIZE, K1, K3, PATCH};

/// Activations for one fused batch.
pub struct BatchTrace<F> {
    cols: Array2<F>,              // [n*4096, 27]
    a1: Array2<F>,                // [n*4096, 64]
    a2: Array2<F>,                // [n*4096, 64]
    a3: Array2<F>,                // [n*4096, 128]
    dropout_mask: Option<Array2<F>>, // [n, 128]
    h: Array2<F>,                 // [n, 128]
    f1: Array2<F>,                // [n, 64]
    f2: Array2<F>,                // [n, 32]
    n: usize,
}

fn im2col_into<F: NetFloat>(x: &Array3<F>, cols: &mut ndarray::ArrayViewMut2<F>) {
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
                        cols[(row, c * 9 + ky * 3 + kx)] = x[(iy as usize, ix as usize, c)];
                    }
                }
            }
        }
    }
}

/// Adds the per-channel bias and applies ReLU in one pass.
fn bias_relu<F: NetFloat>(a: &mut Array2<F>, bias: &Array1<F>) {
    let zero = F::zero();
    let b = bias.as_slice().expect("bias is contiguous");
    for mut row in a.rows_mut() {
        let r = row.as_slice_mut().expect("activations are contiguous");
        for (v, &bi) in r.iter_mut().zip(b) {
            let t = *v + bi;
            *v = if t > zero { t } else { zero };
        }
    }
}

/// Scores `n` inputs in one fused pass. Dropout masks (training mode) are
/// drawn sequentially per item from `rng`.
pub fn forward_fused<F: NetFloat>(
    params: &NetworkParams<F>,
    xs: &[Array3<F>],
    training: bool,
    dropout_p: f64,
    rng: &mut ChaCha12Rng,
) -> Result<(Vec<F>, BatchTrace<F>)> {
    let n = xs.len();
    if n == 0 {
        return Err(Error::EmptyInput("forward_fused"));
    }
    let rows = n * INPUT_PIXELS;
    let mut cols = Array2::zeros((rows, PATCH));
    for (i, x) in xs.iter().enumerate() {
        assert_eq!(x.dim(), (INPUT_SIZE, INPUT_SIZE, C_IN));
        let mut block = cols.slice_mut(s![i * INPUT_PIXELS..(i + 1) * INPUT_PIXELS, ..]);
        im2col_into(x, &mut block);
    }

    let w1 = params.conv1_w.to_shape((K1, PATCH)).expect("conv1 weights are contiguous");
    let mut a1 = cols.dot(&w1.t());
    bias_relu(&mut a1, &params.conv1_b);
    let mut a2 = a1.dot(&params.conv2_w.t());
    bias_relu(&mut a2, &params.conv2_b);
    let mut a3 = a2.dot(&params.conv3_w.t());
    bias_relu(&mut a3, &params.conv3_b);

    let inv_pix = F::from_usize(INPUT_PIXELS).map(|p| F::one() / p).expect("fits");
    let mut pooled = Array2::zeros((n, K3));
    for i in 0..n {
        let block = a3.slice(s![i * INPUT_PIXELS..(i + 1) * INPUT_PIXELS, ..]);
        let mut acc = pooled.row_mut(i);
        for row in block.rows() {
            acc += &row;
        }
        acc.mapv_inplace(|v| v * inv_pix);
    }

    let (h, dropout_mask) = if training && dropout_p > 0.0 {
        let keep = 1.0 - dropout_p;
        let scale = F::from_f64(1.0 / keep).expect("fits");
        let mask = Array2::from_shape_fn((n, K3), |_| {
            if rng.random::<f64>() < keep {
                scale
            } else {
                F::zero()
            }
        });
        (&pooled * &mask, Some(mask))
    } else {
        (pooled, None)
    };

    let mut f1 = h.dot(&params.fc1_w.t());
    bias_relu(&mut f1, &params.fc1_b);
    let mut f2 = f1.dot(&params.fc2_w.t());
    bias_relu(&mut f2, &params.fc2_b);
    let scores_arr = f2.dot(&params.fc3_w.row(0)) + params.fc3_b[0];
    let scores: Vec<F> = scores_arr.to_vec();
    if scores.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteActivation { layer: "network" });
    }

    Ok((scores, BatchTrace { cols, a1, a2, a3, dropout_mask, h, f1, f2, n }))
}

fn masked_col_grads<F: NetFloat>(
    grad: &mut Array2<F>,
    post: &Array2<F>,
    bias_grad: &mut Array1<F>,
) {
    let zero = F::zero();
    let bg = bias_grad.as_slice_mut().expect("contiguous");
    for (mut grow, prow) in grad.rows_mut().into_iter().zip(post.rows()) {
        let g = grow.as_slice_mut().expect("contiguous");
        let p = prow.as_slice().expect("contiguous");
        for k in 0..g.len() {
            if p[k] <= zero {
                g[k] = zero;
            } else {
                bg[k] = bg[k] + g[k];
            }
        }
    }
}

/// Reverse pass over a fused batch. Returns gradients summed across the
/// batch (head slots stay zero; the training loop fills them).
pub fn backward_fused<F: NetFloat>(
    params: &NetworkParams<F>,
    trace: &BatchTrace<F>,
    d_scores: &[F],
) -> Result<Gradients<F>> {
    let n = trace.n;
    if d_scores.len() != n {
        return Err(Error::LengthMismatch {
            what: "backward_fused d_scores vs batch",
            left: d_scores.len(),
            right: n,
        });
    }
    let mut grads = Gradients::<F>::zeros(params.n_candidates());
    let ds = Array1::from_vec(d_scores.to_vec());

    // fc3: scores = f2 . w6 + b6
    grads.fc3_w.row_mut(0).assign(&trace.f2.t().dot(&ds));
    grads.fc3_b[0] = ds.sum();
    let mut d_f2 = Array2::zeros((n, F2));
    for i in 0..n {
        let mut row = d_f2.row_mut(i);
        row.assign(&params.fc3_w.row(0));
        row.mapv_inplace(|v| v * ds[i]);
    }
    masked_col_grads(&mut d_f2, &trace.f2, &mut grads.fc2_b);
    grads.fc2_w.assign(&d_f2.t().dot(&trace.f1));
    let mut d_f1 = d_f2.dot(&params.fc2_w);
    masked_col_grads(&mut d_f1, &trace.f1, &mut grads.fc1_b);
    grads.fc1_w.assign(&d_f1.t().dot(&trace.h));
    let d_h = d_f1.dot(&params.fc1_w);

    let inv_pix = F::from_usize(INPUT_PIXELS).map(|p| F::one() / p).expect("fits");
    let d_cell = match &trace.dropout_mask {
        Some(mask) => (&d_h * mask).mapv_into(|v| v * inv_pix),
        None => d_h.mapv_into(|v| v * inv_pix),
    };

    // conv3: broadcast each candidate's pooled gradient over its spatial
    // block, masked by the ReLU activation pattern; the per-channel bias
    // gradient accumulates in the same pass.
    let rows = n * INPUT_PIXELS;
    let zero = F::zero();
    let mut d_a3 = Array2::zeros((rows, K3));
    {
        let b3 = grads.conv3_b.as_slice_mut().expect("contiguous");
        for i in 0..n {
            let cell = d_cell.row(i);
            let cell = cell.as_slice().expect("contiguous");
            let post = trace.a3.slice(s![i * INPUT_PIXELS..(i + 1) * INPUT_PIXELS, ..]);
            let mut dst = d_a3.slice_mut(s![i * INPUT_PIXELS..(i + 1) * INPUT_PIXELS, ..]);
            for (mut drow, prow) in dst.rows_mut().into_iter().zip(post.rows()) {
                let d = drow.as_slice_mut().expect("contiguous");
                let p = prow.as_slice().expect("contiguous");
                for k in 0..K3 {
                    if p[k] > zero {
                        d[k] = cell[k];
                        b3[k] = b3[k] + cell[k];
                    }
                }
            }
        }
    }
    grads.conv3_w.assign(&d_a3.t().dot(&trace.a2));
    let mut d_a2 = d_a3.dot(&params.conv3_w);
    drop(d_a3);

    masked_col_grads(&mut d_a2, &trace.a2, &mut grads.conv2_b);
    grads.conv2_w.assign(&d_a2.t().dot(&trace.a1));

    if !params.conv1_frozen {
        let mut d_a1 = d_a2.dot(&params.conv2_w);
        drop(d_a2);
        masked_col_grads(&mut d_a1, &trace.a1, &mut grads.conv1_b);
        let w_grad = d_a1.t().dot(&trace.cols);
        grads
            .conv1_w
            .assign(&w_grad.to_shape((K1, C_IN, 3, 3)).expect("contiguous"));
    }

    Ok(grads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{backward, forward, init_params};
    use rand::prelude::*;

    fn inputs_f64(n: usize, seed: u64) -> Vec<Array3<f64>> {
        let mut r = ChaCha12Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| Array3::from_shape_fn((64, 64, 3), |_| r.random::<f64>() * 2.0 - 1.0))
            .collect()
    }

    #[test]
    fn fused_forward_matches_reference_in_f64() {
        let params = init_params::<f64>(3, 4, None).unwrap();
        let xs = inputs_f64(4, 9);
        let mut rng = ChaCha12Rng::seed_from_u64(0);
        let (scores, _) = forward_fused(&params, &xs, false, 0.0, &mut rng).unwrap();
        for (i, x) in xs.iter().enumerate() {
            let (s, _) = forward(&params, x, false, 0.0, &mut rng).unwrap();
            assert!(
                (scores[i] - s).abs() <= 1e-12 * s.abs().max(1.0),
                "fused {} vs reference {s}",
                scores[i]
            );
        }
    }

    #[test]
    fn fused_backward_matches_reference_in_f64() {
        let mut params = init_params::<f64>(5, 3, None).unwrap();
        params.conv1_frozen = false;
        let xs = inputs_f64(3, 11);
        let mut rng = ChaCha12Rng::seed_from_u64(0);
        let d_scores = vec![0.7, -1.3, 0.25];

        let (_, batch_trace) = forward_fused(&params, &xs, false, 0.0, &mut rng).unwrap();
        let fused = backward_fused(&params, &batch_trace, &d_scores).unwrap();

        let mut traces = Vec::new();
        for x in &xs {
            let (_, t) = forward(&params, x, false, 0.0, &mut rng).unwrap();
            traces.push(t);
        }
        let reference = backward(&params, &traces, &d_scores).unwrap();

        let close = |a: &[f64], b: &[f64], what: &str| {
            for (x, y) in a.iter().zip(b) {
                assert!(
                    (x - y).abs() <= 1e-10 * y.abs().max(1e-3),
                    "{what}: fused {x} vs reference {y}"
                );
            }
        };
        close(fused.conv1_w.as_slice().unwrap(), reference.conv1_w.as_slice().unwrap(), "conv1_w");
        close(fused.conv1_b.as_slice().unwrap(), reference.conv1_b.as_slice().unwrap(), "conv1_b");
        close(fused.conv2_w.as_slice().unwrap(), reference.conv2_w.as_slice().unwrap(), "conv2_w");
        close(fused.conv2_b.as_slice().unwrap(), reference.conv2_b.as_slice().unwrap(), "conv2_b");
        close(fused.conv3_w.as_slice().unwrap(), reference.conv3_w.as_slice().unwrap(), "conv3_w");
        close(fused.conv3_b.as_slice().unwrap(), reference.conv3_b.as_slice().unwrap(), "conv3_b");
        close(fused.fc1_w.as_slice().unwrap(), reference.fc1_w.as_slice().unwrap(), "fc1_w");
        close(fused.fc1_b.as_slice().unwrap(), reference.fc1_b.as_slice().unwrap(), "fc1_b");
        close(fused.fc2_w.as_slice().unwrap(), reference.fc2_w.as_slice().unwrap(), "fc2_w");
        close(fused.fc2_b.as_slice().unwrap(), reference.fc2_b.as_slice().unwrap(), "fc2_b");
        close(fused.fc3_w.as_slice().unwrap(), reference.fc3_w.as_slice().unwrap(), "fc3_w");
        close(fused.fc3_b.as_slice().unwrap(), reference.fc3_b.as_slice().unwrap(), "fc3_b");
    }

    #[test]
    fn fused_training_mode_draws_one_mask_per_item() {
        let params = init_params::<f64>(6, 2, None).unwrap();
        let xs = inputs_f64(2, 13);
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let (_, trace) = forward_fused(&params, &xs, true, 0.5, &mut rng).unwrap();
        let mask = trace.dropout_mask.as_ref().unwrap();
        assert_eq!(mask.dim(), (2, 128));
        assert!(mask.iter().all(|&v| v == 0.0 || v == 2.0));
    }
}
