//! End-to-end training: per-batch candidate correction, likelihood
//! scoring, posterior loss, Adam updates under the step learning-rate
//! schedule, and the multi-device regime (camera-specific candidates,
//! shared CNN, gain/bias heads pinned at identity).
//!
//! Determinism contract: identical (config, data, seed) produce an
//! identical final checkpoint. All shuffles and dropout masks derive from
//! one seeded generator and every reduction uses a fixed order.

use std::collections::BTreeMap;

use ndarray::{Array3, Dimension};
use rand::prelude::*;
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::candidates::CandidateSet;
use crate::color::UnitRgb;
use crate::data::{corrected_thumbnail, resize_stage, LabeledImage};
use crate::error::{Error, Result};
use crate::network::{
    backward_fused, forward_fused, init_params, Gradients, NetFloat, NetworkParams,
};
use crate::posterior::{estimate_illuminant, log_posterior, loss_and_grad};

/// Hyperparameters. Defaults follow the training recipe: 120 epochs,
/// batch 32, Adam at 5e-3 halved after epochs 10, 50 and 80, K = 120
/// candidates, 50% dropout, frozen first convolution.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr0: f64,
    pub lr_drop_epochs: Vec<usize>,
    pub lr_drop_factor: f64,
    pub k_candidates: usize,
    pub dropout_p: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub seed: u64,
    pub multi_device: bool,
    pub freeze_conv1: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 120,
            batch_size: 32,
            lr0: 5e-3,
            lr_drop_epochs: vec![10, 50, 80],
            lr_drop_factor: 0.5,
            k_candidates: 120,
            dropout_p: 0.5,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            seed: 0,
            multi_device: false,
            freeze_conv1: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            return Err(Error::BadConfig(format!("epochs must be >= 1, got {}", self.epochs)));
        }
        if self.batch_size < 1 {
            return Err(Error::BadConfig("batch_size must be >= 1".into()));
        }
        if !(self.lr0 > 0.0) {
            return Err(Error::BadConfig(format!("lr0 must be > 0, got {}", self.lr0)));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::BadConfig(format!(
                "dropout_p must lie in [0, 1), got {}",
                self.dropout_p
            )));
        }
        if self.k_candidates < 1 {
            return Err(Error::BadConfig("k_candidates must be >= 1".into()));
        }
        Ok(())
    }
}

/// Learning rate at a 0-based epoch: `lr0 * factor^(drops at or before
/// epoch)`. "Divided by two after 10 epochs" means epoch 10 already runs
/// at the halved rate.
pub fn lr_at(config: &TrainConfig, epoch: usize) -> f64 {
    let drops = config.lr_drop_epochs.iter().filter(|&&d| d <= epoch).count();
    config.lr0 * config.lr_drop_factor.powi(drops as i32)
}

/// Adam first/second moments, shaped like the gradients, plus the step
/// counter used for bias correction.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub m: Gradients<f32>,
    pub v: Gradients<f32>,
    pub step: u64,
}

impl AdamState {
    pub fn new(n_candidates: usize) -> Self {
        AdamState {
            m: Gradients::zeros(n_candidates),
            v: Gradients::zeros(n_candidates),
            step: 0,
        }
    }
}

/// One Adam update on a single tensor with bias correction:
/// `p -= lr * m_hat / (sqrt(v_hat) + eps)`.
pub fn adam_update_tensor<F: NetFloat, D: Dimension>(
    param: &mut ndarray::Array<F, D>,
    grad: &ndarray::Array<F, D>,
    m: &mut ndarray::Array<F, D>,
    v: &mut ndarray::Array<F, D>,
    step: u64,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
) {
    let b1 = F::from_f64(beta1).expect("fits");
    let b2 = F::from_f64(beta2).expect("fits");
    let one = F::one();
    let bc1 = F::from_f64(1.0 - beta1.powi(step as i32)).expect("fits");
    let bc2 = F::from_f64(1.0 - beta2.powi(step as i32)).expect("fits");
    let lr_f = F::from_f64(lr).expect("fits");
    let eps_f = F::from_f64(eps).expect("fits");
    ndarray::Zip::from(param)
        .and(grad)
        .and(m)
        .and(v)
        .for_each(|p, &g, m_i, v_i| {
            *m_i = b1 * *m_i + (one - b1) * g;
            *v_i = b2 * *v_i + (one - b2) * g * g;
            let m_hat = *m_i / bc1;
            let v_hat = *v_i / bc2;
            *p = *p - lr_f * m_hat / (v_hat.sqrt() + eps_f);
        });
}

fn apply_adam(
    params: &mut NetworkParams<f32>,
    grads: &Gradients<f32>,
    adam: &mut AdamState,
    config: &TrainConfig,
    lr: f64,
) {
    adam.step += 1;
    let t = adam.step;
    let (b1, b2, eps) = (config.adam_beta1, config.adam_beta2, config.adam_epsilon);
    macro_rules! upd {
        ($field:ident) => {
            adam_update_tensor(
                &mut params.$field,
                &grads.$field,
                &mut adam.m.$field,
                &mut adam.v.$field,
                t,
                lr,
                b1,
                b2,
                eps,
            )
        };
    }
    if !params.conv1_frozen {
        upd!(conv1_w);
        upd!(conv1_b);
    }
    upd!(conv2_w);
    upd!(conv2_b);
    upd!(conv3_w);
    upd!(conv3_b);
    upd!(fc1_w);
    upd!(fc1_b);
    upd!(fc2_w);
    upd!(fc2_b);
    upd!(fc3_w);
    upd!(fc3_b);
    if !config.multi_device {
        upd!(gains);
        upd!(biases);
    }
    debug_assert!(params.all_finite(), "parameters went non-finite after Adam step");
    debug_assert!(adam.m.all_finite() && adam.v.all_finite(), "Adam moments went non-finite");
}

/// A resized image ready for per-candidate correction.
struct PreparedImage {
    resized: Array3<f64>,
    truth: UnitRgb,
}

fn prepare(img: &LabeledImage) -> Result<PreparedImage> {
    Ok(PreparedImage { resized: resize_stage(img)?, truth: img.truth })
}

/// Forward + posterior + backward for one batch of prepared images;
/// gradients are averaged over the batch and applied in a single Adam
/// step. Returns the mean loss (radians).
#[allow(clippy::too_many_arguments)]
fn step_prepared(
    params: &mut NetworkParams<f32>,
    adam: &mut AdamState,
    batch: &[&PreparedImage],
    cands: &CandidateSet,
    config: &TrainConfig,
    lr: f64,
    epoch: usize,
    step_idx: usize,
    rng: &mut ChaCha12Rng,
) -> Result<f64> {
    let n = cands.len();
    if n != params.n_candidates() {
        return Err(Error::LengthMismatch {
            what: "candidate set vs gain/bias heads",
            left: n,
            right: params.n_candidates(),
        });
    }
    let gains: Vec<f64> = params.gains.iter().map(|&g| g as f64).collect();
    let biases: Vec<f64> = params.biases.iter().map(|&b| b as f64).collect();

    let mut total = Gradients::<f32>::zeros(n);
    let mut loss_sum = 0.0f64;

    for img in batch {
        let thumbs: Vec<Array3<f32>> = cands
            .candidates
            .par_iter()
            .map(|cand| {
                let thumb = corrected_thumbnail(&img.resized, cand)?;
                Ok(thumb.pixels.mapv(|v| v as f32))
            })
            .collect::<Result<_>>()?;
        let (scores_f32, trace) =
            forward_fused(params, &thumbs, true, config.dropout_p, rng)?;
        let scores: Vec<f64> = scores_f32.iter().map(|&s| s as f64).collect();

        let logits = log_posterior(&scores, &gains, &biases)?;
        let posterior = estimate_illuminant(cands, &logits)?;
        let (loss, dl_dlogits) = loss_and_grad(&posterior, &img.truth, cands);
        loss_sum += loss;

        let d_scores: Vec<f32> =
            dl_dlogits.iter().zip(&gains).map(|(d, g)| (d * g) as f32).collect();
        let mut img_grads = backward_fused(params, &trace, &d_scores)?;
        for i in 0..n {
            img_grads.gains[i] = (dl_dlogits[i] * scores[i]) as f32;
            img_grads.biases[i] = dl_dlogits[i] as f32;
        }
        total.add_assign(&img_grads);
    }

    let mean_loss = loss_sum / batch.len() as f64;
    if !mean_loss.is_finite() {
        return Err(Error::NonFiniteLoss { epoch, step: step_idx, value: mean_loss });
    }
    total.scale(1.0 / batch.len() as f32);
    apply_adam(params, &total, adam, config, lr);
    Ok(mean_loss)
}

/// One optimizer step over a batch of labeled images. In multi-device
/// mode the batch must be single-camera and must match the candidate
/// set's camera.
#[allow(clippy::too_many_arguments)]
pub fn train_step(
    params: &mut NetworkParams<f32>,
    adam: &mut AdamState,
    batch: &[LabeledImage],
    cands: &CandidateSet,
    config: &TrainConfig,
    lr: f64,
    epoch: usize,
    step_idx: usize,
    rng: &mut ChaCha12Rng,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::EmptyInput("train_step batch"));
    }
    if config.multi_device {
        let first = &batch[0].camera_id;
        if let Some(other) = batch.iter().find(|im| im.camera_id != *first) {
            return Err(Error::MixedCameraBatch(first.clone(), other.camera_id.clone()));
        }
        if !cands.camera_id.is_empty() && cands.camera_id != *first {
            return Err(Error::MixedCameraBatch(cands.camera_id.clone(), first.clone()));
        }
    }
    let prepared: Vec<PreparedImage> = batch.iter().map(prepare).collect::<Result<_>>()?;
    let refs: Vec<&PreparedImage> = prepared.iter().collect();
    step_prepared(params, adam, &refs, cands, config, lr, epoch, step_idx, rng)
}

/// Final parameters plus the per-epoch mean training loss.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: NetworkParams<f32>,
    pub history: Vec<f64>,
}

fn validate_setup(
    config: &TrainConfig,
    datasets: &BTreeMap<String, Vec<LabeledImage>>,
    cand_sets: &BTreeMap<String, CandidateSet>,
) -> Result<usize> {
    if datasets.is_empty() {
        return Err(Error::EmptyInput("train datasets"));
    }
    for camera in datasets.keys() {
        if !cand_sets.contains_key(camera) {
            return Err(Error::MissingCandidateSet(camera.clone()));
        }
    }
    if !config.multi_device && datasets.len() != 1 {
        return Err(Error::BadConfig(format!(
            "single-device mode expects exactly one camera, got {}",
            datasets.len()
        )));
    }
    let mut n = None;
    for (camera, set) in cand_sets {
        if !datasets.contains_key(camera) {
            continue;
        }
        match n {
            None => n = Some(set.len()),
            Some(existing) if existing != set.len() => {
                return Err(Error::BadConfig(format!(
                    "candidate sets must share one size: {} has {}, expected {existing}",
                    camera,
                    set.len()
                )));
            }
            _ => {}
        }
    }
    Ok(n.expect("at least one camera"))
}

fn train_loop(
    mut params: NetworkParams<f32>,
    config: &TrainConfig,
    datasets: &BTreeMap<String, Vec<LabeledImage>>,
    cand_sets: &BTreeMap<String, CandidateSet>,
) -> Result<TrainOutcome> {
    params.conv1_frozen = config.freeze_conv1;
    let frozen_conv1_before = params.conv1_w.clone();

    // Resize every image once; epochs revisit the cached 64x64 planes.
    let mut prepared: BTreeMap<&str, Vec<PreparedImage>> = BTreeMap::new();
    for (camera, images) in datasets {
        let items: Vec<PreparedImage> = images.iter().map(prepare).collect::<Result<_>>()?;
        prepared.insert(camera.as_str(), items);
    }

    let mut adam = AdamState::new(params.n_candidates());
    let mut rng =
        ChaCha12Rng::seed_from_u64(config.seed.wrapping_mul(0x9e3779b97f4a7c15).wrapping_add(1));
    let mut history = Vec::with_capacity(config.epochs);

    let cameras: Vec<&str> = prepared.keys().cloned().collect();
    let max_len = prepared.values().map(|v| v.len()).max().unwrap_or(0);
    if max_len == 0 {
        return Err(Error::EmptyInput("train datasets hold no images"));
    }
    let batches_per_camera = max_len.div_ceil(config.batch_size);

    for epoch in 0..config.epochs {
        let lr = lr_at(config, epoch);
        let mut orders: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for camera in &cameras {
            let len = prepared[camera].len();
            let mut order: Vec<usize> = (0..len).collect();
            order.shuffle(&mut rng);
            orders.insert(camera, order);
        }

        let mut loss_weighted = 0.0f64;
        let mut images_seen = 0usize;
        let mut step_idx = 0usize;
        // Round-robin over cameras, one camera per batch; shorter cameras
        // cycle their shuffled order so every camera contributes the same
        // number of batches per epoch.
        for b in 0..batches_per_camera {
            for camera in &cameras {
                let items = &prepared[camera];
                let order = &orders[camera];
                let len = items.len();
                let batch: Vec<&PreparedImage> = (0..config.batch_size.min(len))
                    .map(|j| &items[order[(b * config.batch_size + j) % len]])
                    .collect();
                let loss = step_prepared(
                    &mut params,
                    &mut adam,
                    &batch,
                    &cand_sets[*camera],
                    config,
                    lr,
                    epoch,
                    step_idx,
                    &mut rng,
                )?;
                loss_weighted += loss * batch.len() as f64;
                images_seen += batch.len();
                step_idx += 1;
            }
        }
        history.push(loss_weighted / images_seen as f64);

        if config.multi_device {
            assert!(
                params.gains.iter().all(|&g| g == 1.0)
                    && params.biases.iter().all(|&b| b == 0.0),
                "multi-device heads moved away from identity"
            );
        }
    }

    if config.freeze_conv1 {
        assert_eq!(
            params.conv1_w, frozen_conv1_before,
            "frozen conv1 weights changed during training"
        );
    }
    Ok(TrainOutcome { params, history })
}

/// Trains from scratch: He-initialized parameters (conv1 frozen per the
/// config), candidate sets fixed per camera, one shared CNN.
pub fn train(
    config: &TrainConfig,
    datasets: &BTreeMap<String, Vec<LabeledImage>>,
    cand_sets: &BTreeMap<String, CandidateSet>,
) -> Result<TrainOutcome> {
    config.validate()?;
    let n = validate_setup(config, datasets, cand_sets)?;
    let params = init_params::<f32>(config.seed, n, None)?;
    train_loop(params, config, datasets, cand_sets)
}

/// Fine-tuning / adaptation: CNN weights carry over from `base`, gain and
/// bias heads are re-initialized to identity at the new candidate count.
/// With zero epochs this is the training-free adaptation path: the CNN is
/// untouched and only the heads are re-shaped.
pub fn pretrain_finetune(
    base: &NetworkParams<f32>,
    config: &TrainConfig,
    datasets: &BTreeMap<String, Vec<LabeledImage>>,
    cand_sets: &BTreeMap<String, CandidateSet>,
) -> Result<TrainOutcome> {
    let n = validate_setup(config, datasets, cand_sets)?;
    let mut params = base.clone();
    params.gains = ndarray::Array1::ones(n);
    params.biases = ndarray::Array1::zeros(n);
    if config.epochs == 0 {
        params.conv1_frozen = config.freeze_conv1;
        return Ok(TrainOutcome { params, history: Vec::new() });
    }
    config.validate()?;
    train_loop(params, config, datasets, cand_sets)
}

/// Re-initializes heads at a new candidate count without any training:
/// the inference-time adaptation used when candidate sets come from a
/// camera unseen during training.
pub fn reset_heads(params: &mut NetworkParams<f32>, n_candidates: usize) {
    params.gains = ndarray::Array1::ones(n_candidates);
    params.biases = ndarray::Array1::zeros(n_candidates);
}


#[cfg(test)]
mod train_diag {
    use super::*;
    use crate::candidates::kmeans_candidates;
    use crate::data::SynthCamera;

    #[test]
    #[ignore]
    fn learning_curve() {
        use crate::baselines::gray_world;
        use crate::candidates::quantization_floor;
        use crate::data::synth_scene;
        use crate::evaluation::error_stats;
        use crate::inference::infer_image;
        use rand::SeedableRng;

        let n_scenes = 64usize;
        let n_train = 48usize;
        let k = 12usize;
        let cam_a = SynthCamera::for_index(7, 0);
        let cam_b = SynthCamera::for_index(7, 1);
        let mut train_sets = std::collections::BTreeMap::new();
        let mut test_imgs = Vec::new();
        for cam in [&cam_a, &cam_b] {
            let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(
                10 ^ cam.camera_id.len() as u64 + cam.camera_id.as_bytes()[3] as u64);
            let data: Vec<_> = (0..n_scenes)
                .map(|i| {
                    let ell = cam.sample_illuminant(&mut rng);
                    let mut img = synth_scene(9000 + i as u64, 120, &ell);
                    img.camera_id = cam.camera_id.clone();
                    img.scene_id = format!("scene{i}");
                    img
                })
                .collect();
            let (train, test): (Vec<_>, Vec<_>) =
                data.into_iter().partition(|im| im.scene_id[5..].parse::<usize>().unwrap() < n_train);
            train_sets.insert(cam.camera_id.clone(), train);
            test_imgs.extend(test);
        }
        let mut cand_sets = std::collections::BTreeMap::new();
        for (camera, images) in &train_sets {
            let truths: Vec<UnitRgb> = images.iter().map(|im| im.truth).collect();
            let mut set = kmeans_candidates(&truths, k, 3).unwrap();
            set.camera_id = camera.clone();
            cand_sets.insert(camera.clone(), set);
        }
        let config = TrainConfig {
            epochs: 40,
            batch_size: 16,
            k_candidates: k,
            multi_device: true,
            seed: 5,
            ..TrainConfig::default()
        };
        let t0 = std::time::Instant::now();
        let outcome = train(&config, &train_sets, &cand_sets).unwrap();
        for (e, l) in outcome.history.iter().enumerate() {
            if e % 4 == 0 || e == outcome.history.len() - 1 {
                println!("epoch {e:3}: loss {l:.5} rad = {:.3} deg", l.to_degrees());
            }
        }
        println!("train elapsed: {:.1}s", t0.elapsed().as_secs_f64());

        let mut model_err = Vec::new();
        let mut gw_err = Vec::new();
        for img in &test_imgs {
            let cands = &cand_sets[&img.camera_id];
            let r = infer_image(&outcome.params, cands, img).unwrap();
            model_err.push(crate::color::angular_error_deg(&r.estimate, &img.truth));
            let gw = gray_world(&img.image).unwrap();
            gw_err.push(crate::color::angular_error_deg(&gw, &img.truth));
        }
        let ms = error_stats(&model_err).unwrap();
        let gs = error_stats(&gw_err).unwrap();
        println!("model:       median {:.3} mean {:.3}", ms.median, ms.mean);
        println!("gray-world:  median {:.3} mean {:.3}", gs.median, gs.mean);
        for cam in [&cam_a, &cam_b] {
            let truths: Vec<UnitRgb> = test_imgs
                .iter()
                .filter(|im| im.camera_id == cam.camera_id)
                .map(|im| im.truth)
                .collect();
            let fs = quantization_floor(&cand_sets[&cam.camera_id], &truths).unwrap();
            println!("floor {}: median {:.3} mean {:.3}", cam.camera_id, fs.median, fs.mean);
        }
    }

}

#[cfg(test)]
mod perf_diag {
    use super::*;
    use crate::color::normalize_illuminant;
    use crate::network::{backward, forward};
    use crate::data::{corrected_thumbnail, synth_scene};
    use std::time::Instant;

    #[test]
    #[ignore]
    fn timing_breakdown() {
        let ell = normalize_illuminant([0.8, 1.0, 0.7]).unwrap();
        let img = synth_scene(1, 120, &ell);
        let resized = resize_stage(&img).unwrap();
        let params = init_params::<f32>(1, 8, None).unwrap();
        let cand = normalize_illuminant([0.75, 1.0, 0.72]).unwrap();

        let t = Instant::now();
        for _ in 0..50 {
            let thumb = corrected_thumbnail(&resized, &cand).unwrap();
            std::hint::black_box(&thumb);
        }
        println!("thumbnail build: {:.2} ms", t.elapsed().as_secs_f64() * 1000.0 / 50.0);

        let thumb = corrected_thumbnail(&resized, &cand).unwrap();
        let t = Instant::now();
        let mut xs = Vec::new();
        for _ in 0..50 {
            let x: Array3<f32> = thumb.pixels.mapv(|v| v as f32);
            xs.push(x[(0,0,0)]);
        }
        std::hint::black_box(&xs);
        println!("f32 cast: {:.2} ms", t.elapsed().as_secs_f64() * 1000.0 / 50.0);

        let x: Array3<f32> = thumb.pixels.mapv(|v| v as f32);
        let mut rng = ChaCha12Rng::seed_from_u64(0);
        let t = Instant::now();
        for _ in 0..50 {
            let (s, tr) = forward(&params, &x, true, 0.5, &mut rng).unwrap();
            std::hint::black_box((s, tr.score));
        }
        println!("forward: {:.2} ms", t.elapsed().as_secs_f64() * 1000.0 / 50.0);

        let (_, tr) = forward(&params, &x, true, 0.5, &mut rng).unwrap();
        let t = Instant::now();
        for _ in 0..50 {
            let g = backward(&params, std::slice::from_ref(&tr), &[1.0f32]).unwrap();
            std::hint::black_box(g.fc3_b[0]);
        }
        println!("backward: {:.2} ms", t.elapsed().as_secs_f64() * 1000.0 / 50.0);
    }
}
