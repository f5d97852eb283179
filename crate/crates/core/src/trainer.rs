//! Supervised training: noisy-input/clean-target pair construction, RMSE
//! loss, Adam, early stopping, and loss logging.
//!
//! Pair generation is fully seeded. Training noise is resampled fresh every
//! epoch (it doubles as augmentation) from streams keyed by
//! `(run_seed, epoch, image_index)`; evaluation noise is keyed by
//! `(run_seed, split_name, image_index)` and therefore identical across
//! epochs and across processes. With a fixed config, dataset, and build,
//! [`train`] produces byte-identical checkpoints.

use std::time::Instant;

use rand::Rng;
use thiserror::Error;

use crate::image::{augment, AugmentConfig, Image, LabeledDataset};
use crate::metrics;
use crate::model::{
    self, audit, GradBuffer, ModelConfig, ModelError, ParamStore, Scalar, StoreMeta, Tensor,
    Variant, WidthScale,
};
use crate::noise::{apply_noise, sample_params, NoiseError};
use crate::rng::{named_stream, stream};

/// Hard cap on training length.
pub const MAX_EPOCH_CAP: usize = 50;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("config: {0}")]
    BadConfig(String),
    #[error("{0} split is empty")]
    EmptySplit(&'static str),
    #[error("dataset images must share dimensions: found {0}x{1} and {2}x{3}")]
    MixedDims(usize, usize, usize, usize),
    #[error("non-finite loss at epoch {epoch}; aborted (last good checkpoint attached)")]
    NonFiniteLoss {
        epoch: usize,
        last_good: Option<Box<(ParamStore<f32>, LossLog)>>,
    },
    #[error("non-finite gradient in step {step}")]
    NonFiniteGradient { step: u64 },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Noise(#[from] NoiseError),
}

/// Training hyperparameters.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub seed: u64,
    pub width_scale: WidthScale,
    pub variant: Variant,
    /// Epochs without a validation-RMSE improvement before stopping.
    pub early_stop_patience: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            batch_size: 4,
            max_epochs: MAX_EPOCH_CAP,
            seed: 0,
            width_scale: WidthScale::Full,
            variant: Variant::Full,
            early_stop_patience: 10,
        }
    }
}

impl TrainConfig {
    pub fn model_config(&self) -> ModelConfig {
        ModelConfig::new(self.variant, self.width_scale)
    }

    fn validate(&self) -> Result<(), TrainError> {
        if !(self.learning_rate > 0.0
            && self.beta1 > 0.0
            && self.beta2 > 0.0
            && self.adam_eps > 0.0)
        {
            return Err(TrainError::BadConfig(
                "hyperparameters must be positive".into(),
            ));
        }
        if !(self.beta1 < 1.0 && self.beta2 < 1.0) {
            return Err(TrainError::BadConfig("betas must be < 1".into()));
        }
        if self.batch_size == 0 {
            return Err(TrainError::BadConfig("batch_size must be >= 1".into()));
        }
        if self.max_epochs == 0 || self.max_epochs > MAX_EPOCH_CAP {
            return Err(TrainError::BadConfig(format!(
                "max_epochs must be in 1..={MAX_EPOCH_CAP}"
            )));
        }
        if self.early_stop_patience == 0 {
            return Err(TrainError::BadConfig("patience must be >= 1".into()));
        }
        Ok(())
    }
}

/// One completed epoch of the loss log.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRow {
    pub epoch: usize,
    pub train_rmse: f64,
    pub val_rmse: f64,
    pub val_psnr: f64,
    pub wall_seconds: f64,
}

/// Per-epoch training record; one row per completed epoch.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LossLog {
    pub rows: Vec<EpochRow>,
    /// Epoch whose checkpoint was retained (best validation RMSE).
    pub best_epoch: usize,
}

impl LossLog {
    /// CSV with header `epoch,train_rmse,val_rmse,val_psnr,seconds`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_rmse,val_rmse,val_psnr,seconds\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{:.6},{:.6},{:.6},{:.3}\n",
                r.epoch, r.train_rmse, r.val_rmse, r.val_psnr, r.wall_seconds
            ));
        }
        out
    }
}

// ---------------------------------------------------------------------------
// RMSE loss
// ---------------------------------------------------------------------------

/// Batch-wide RMSE: one square root over the mean of squared errors across
/// every pixel in the batch (not a mean of per-image roots). Returns the
/// loss and its gradient w.r.t. `pred`; the gradient at zero loss is the
/// zero subgradient.
pub fn rmse_loss<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> (f64, Tensor<T>) {
    assert_eq!(pred.shape(), target.shape(), "loss shape mismatch");
    let n = pred.data.len() as f64;
    let mut sum_sq = 0.0f64;
    for (&p, &t) in pred.data.iter().zip(&target.data) {
        let d = p.to_f64() - t.to_f64();
        sum_sq += d * d;
    }
    let loss = (sum_sq / n).sqrt();
    let grad = if loss == 0.0 {
        Tensor::zeros(pred.batch, pred.channels, pred.height, pred.width)
    } else {
        let scale = 1.0 / (n * loss);
        let data = pred
            .data
            .iter()
            .zip(&target.data)
            .map(|(&p, &t)| T::from_f64((p.to_f64() - t.to_f64()) * scale))
            .collect();
        Tensor::from_vec(pred.batch, pred.channels, pred.height, pred.width, data)
    };
    (loss, grad)
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

/// First/second moment accumulators plus the step counter.
pub struct AdamState<T> {
    pub m: GradBuffer<T>,
    pub v: GradBuffer<T>,
    pub t: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(store: &ParamStore<T>) -> Self {
        Self {
            m: GradBuffer::zeros_like(store),
            v: GradBuffer::zeros_like(store),
            t: 0,
        }
    }
}

/// One canonical Adam update with bias correction:
/// `m <- b1*m + (1-b1)*g`, `v <- b2*v + (1-b2)*g^2`,
/// `theta <- theta - lr * m_hat / (sqrt(v_hat) + eps)`.
pub fn adam_step<T: Scalar>(
    store: &mut ParamStore<T>,
    grads: &GradBuffer<T>,
    state: &mut AdamState<T>,
    cfg: &TrainConfig,
) -> Result<(), TrainError> {
    if !grads.all_finite() {
        return Err(TrainError::NonFiniteGradient { step: state.t + 1 });
    }
    state.t += 1;
    let t = state.t as i32;
    let b1 = T::from_f64(cfg.beta1);
    let b2 = T::from_f64(cfg.beta2);
    let one_m_b1 = T::from_f64(1.0 - cfg.beta1);
    let one_m_b2 = T::from_f64(1.0 - cfg.beta2);
    let corr1 = T::from_f64(1.0 - cfg.beta1.powi(t));
    let corr2 = T::from_f64(1.0 - cfg.beta2.powi(t));
    let lr = T::from_f64(cfg.learning_rate);
    let eps = T::from_f64(cfg.adam_eps);
    for i in 0..store.len() {
        let g = grads.by_index(i);
        for (mm, &gg) in state.m.by_index_mut(i).iter_mut().zip(g) {
            *mm = b1 * *mm + one_m_b1 * gg;
        }
        for (vv, &gg) in state.v.by_index_mut(i).iter_mut().zip(g) {
            *vv = b2 * *vv + one_m_b2 * gg * gg;
        }
        let m = state.m.by_index(i);
        let v = state.v.by_index(i);
        for ((th, &mm), &vv) in store.data_mut(i).iter_mut().zip(m).zip(v) {
            let m_hat = mm / corr1;
            let v_hat = vv / corr2;
            *th -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Pair construction
// ---------------------------------------------------------------------------

/// How noisy/clean pairs are generated.
#[derive(Debug, Clone, Copy)]
pub enum PairMode<'a> {
    /// Augment, then fresh noise keyed by `(run_seed, epoch, index)`.
    Train { epoch: usize },
    /// No augmentation; noise keyed by `(run_seed, split_name, index)`,
    /// independent of epoch.
    Eval { split_name: &'a str },
}

/// Build (noisy, clean) pairs for a split, in dataset order.
pub fn make_pairs(
    split: &LabeledDataset,
    mode: PairMode<'_>,
    run_seed: u64,
) -> Result<Vec<(Image, Image)>, TrainError> {
    if split.is_empty() {
        return Err(TrainError::EmptySplit("pair"));
    }
    let aug_cfg = AugmentConfig::default();
    let mut pairs = Vec::with_capacity(split.len());
    for (idx, (img, _)) in split.items.iter().enumerate() {
        let pair = match mode {
            PairMode::Train { epoch } => {
                let mut aug_rng = stream(run_seed, "train-augment", &[epoch as u64, idx as u64]);
                let clean = augment(img, &aug_cfg, &mut aug_rng);
                let mut noise_rng = stream(run_seed, "train-noise", &[epoch as u64, idx as u64]);
                let params = sample_params(&mut noise_rng);
                let noisy = apply_noise(&clean, &params, &mut noise_rng)?;
                (noisy, clean)
            }
            PairMode::Eval { split_name } => {
                let mut noise_rng = named_stream(run_seed, "eval-noise", split_name, &[idx as u64]);
                let params = sample_params(&mut noise_rng);
                let noisy = apply_noise(img, &params, &mut noise_rng)?;
                (noisy, img.clone())
            }
        };
        pairs.push(pair);
    }
    Ok(pairs)
}

/// Stack images into a `[B,1,H,W]` batch tensor.
pub fn batch_tensor(images: &[&Image]) -> Tensor<f32> {
    let h = images[0].height();
    let w = images[0].width();
    let mut data = Vec::with_capacity(images.len() * h * w);
    for img in images {
        data.extend_from_slice(img.pixels());
    }
    Tensor::from_vec(images.len(), 1, h, w, data)
}

/// Clamped single-image inference returning an [`Image`].
pub fn infer_image(
    img: &Image,
    cfg: &ModelConfig,
    store: &ParamStore<f32>,
) -> Result<Image, TrainError> {
    let x = batch_tensor(&[img]);
    let out = model::forward(&x, cfg, store)?;
    Ok(Image::new(img.height(), img.width(), out.data).expect("clamped output is in range"))
}

/// Mean per-image RMSE and PSNR of clamped inference over fixed pairs.
/// This is the exact computation the training loop logs, so re-running it
/// on a loaded checkpoint reproduces logged values digit for digit.
pub fn validate_pairs(
    pairs: &[(Image, Image)],
    cfg: &ModelConfig,
    store: &ParamStore<f32>,
) -> Result<(f64, f64), TrainError> {
    let mut rmse_sum = 0.0f64;
    let mut psnr_sum = 0.0f64;
    for (noisy, clean) in pairs {
        let denoised = infer_image(noisy, cfg, store)?;
        rmse_sum += metrics::rmse(clean, &denoised).expect("dims match");
        psnr_sum += metrics::psnr(clean, &denoised).expect("dims match");
    }
    let n = pairs.len() as f64;
    Ok((rmse_sum / n, psnr_sum / n))
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

fn check_uniform_dims(ds: &LabeledDataset) -> Result<(), TrainError> {
    let (h, w) = (ds.items[0].0.height(), ds.items[0].0.width());
    for (img, _) in &ds.items {
        if img.height() != h || img.width() != w {
            return Err(TrainError::MixedDims(h, w, img.height(), img.width()));
        }
    }
    Ok(())
}

/// Train on the given splits. Returns the best-validation-RMSE checkpoint
/// (its metadata records the epoch it came from) and the complete loss log.
pub fn train(
    train_split: &LabeledDataset,
    val_split: &LabeledDataset,
    cfg: &TrainConfig,
) -> Result<(ParamStore<f32>, LossLog), TrainError> {
    cfg.validate()?;
    if train_split.is_empty() {
        return Err(TrainError::EmptySplit("train"));
    }
    if val_split.is_empty() {
        return Err(TrainError::EmptySplit("val"));
    }
    check_uniform_dims(train_split)?;
    check_uniform_dims(val_split)?;

    let mcfg = cfg.model_config();
    let mut store = model::init_params(&mcfg, cfg.seed);
    audit(&mcfg, &store)?;
    let mut adam = AdamState::new(&store);

    // Eval pairs are epoch-independent; build them once.
    let val_pairs = make_pairs(val_split, PairMode::Eval { split_name: "val" }, cfg.seed)?;

    let mut log = LossLog::default();
    let mut best: Option<(f64, ParamStore<f32>)> = None;
    let mut epochs_since_best = 0usize;

    for epoch in 1..=cfg.max_epochs {
        let t0 = Instant::now();
        let pairs = make_pairs(train_split, PairMode::Train { epoch }, cfg.seed)?;

        let mut order: Vec<usize> = (0..pairs.len()).collect();
        let mut shuffle_rng = stream(cfg.seed, "shuffle", &[epoch as u64]);
        for i in (1..order.len()).rev() {
            let j = shuffle_rng.random_range(0..=i);
            order.swap(i, j);
        }

        let mut loss_sum = 0.0f64;
        let mut batches = 0usize;
        // The last incomplete batch is kept, not dropped.
        for chunk in order.chunks(cfg.batch_size) {
            let noisy: Vec<&Image> = chunk.iter().map(|&i| &pairs[i].0).collect();
            let clean: Vec<&Image> = chunk.iter().map(|&i| &pairs[i].1).collect();
            let x = batch_tensor(&noisy);
            let target = batch_tensor(&clean);
            let (pred, cache) = model::forward_training(&x, &mcfg, &store)?;
            let (loss, grad_out) = rmse_loss(&pred, &target);
            if !loss.is_finite() {
                return Err(TrainError::NonFiniteLoss {
                    epoch,
                    last_good: best.map(|(_, s)| Box::new((s, log))),
                });
            }
            let (grads, _) = model::backward(&grad_out, &cache, &mcfg, &store);
            adam_step(&mut store, &grads, &mut adam, cfg)?;
            loss_sum += loss;
            batches += 1;
        }

        let (val_rmse, val_psnr) = validate_pairs(&val_pairs, &mcfg, &store)?;
        log.rows.push(EpochRow {
            epoch,
            train_rmse: loss_sum / batches as f64,
            val_rmse,
            val_psnr,
            wall_seconds: t0.elapsed().as_secs_f64(),
        });

        let improved = best.as_ref().map(|(b, _)| val_rmse < *b).unwrap_or(true);
        if improved {
            let mut snapshot = store.clone();
            snapshot.meta = StoreMeta {
                variant: cfg.variant,
                width_scale: cfg.width_scale,
                epoch: epoch as u32,
                seed: cfg.seed,
            };
            best = Some((val_rmse, snapshot));
            log.best_epoch = epoch;
            epochs_since_best = 0;
        } else {
            epochs_since_best += 1;
            if epochs_since_best >= cfg.early_stop_patience {
                break;
            }
        }
    }

    let (_, best_store) = best.expect("at least one epoch ran");
    Ok((best_store, log))
}
