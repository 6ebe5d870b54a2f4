//! Head training: mini-batch SGD with momentum, early stopping on
//! validation loss, optional train-time image augmentation.

use std::collections::BTreeMap;

use image::RgbImage;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::softmax_xent;
use super::{FeatureExtractor, Head, Layer, Mode, NetError, Tensor};
use crate::datakit::{Fold, ImageSample, PartDataset};
use crate::rng::derive_seed;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f32,
    pub momentum: f32,
    pub patience: usize,
    pub seed: u64,
    /// Train-time augmentation (flip, rotation, crop, color jitter, random
    /// grayscale). Needs a pixel-capable backend.
    pub augment: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch: 64,
            lr: 0.001,
            momentum: 0.9,
            patience: 5,
            seed: 0,
            augment: true,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<(), NetError> {
        if self.epochs < 1 {
            return Err(NetError::BadTrainConfig("epochs must be >= 1".into()));
        }
        if self.batch < 1 {
            return Err(NetError::BadTrainConfig("batch must be >= 1".into()));
        }
        if !(self.lr > 0.0) {
            return Err(NetError::BadTrainConfig("lr must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(NetError::BadTrainConfig("momentum must be in [0,1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
}

pub struct TrainOutcome {
    pub head: Head,
    pub history: Vec<EpochStats>,
    pub best_epoch: usize,
}

/// Train a head on the dataset's train fold, frozen extractor untouched.
///
/// Linear parameters are (re)initialized from `cfg.seed`; batches, dropout
/// and augmentation all derive from the same seed, so two runs with equal
/// config produce bit-identical parameters. Training stops once validation
/// loss has not improved for `patience` consecutive epochs and the
/// best-validation-loss parameters are returned.
pub fn train_head(
    extractor: &FeatureExtractor,
    head_template: &Head,
    ds: &PartDataset,
    cfg: &TrainConfig,
) -> Result<TrainOutcome, NetError> {
    cfg.validate()?;
    if head_template.classes() != ds.parts {
        return Err(NetError::ClassMismatch {
            head: head_template.classes().to_vec(),
            dataset: ds.parts.clone(),
        });
    }
    if cfg.augment && !extractor.supports_pixels() {
        return Err(NetError::AugmentNeedsPixels(
            extractor.backend_name().to_string(),
        ));
    }

    let mut train: Vec<&ImageSample> = ds.in_fold(Fold::Train).collect();
    train.sort_by(|a, b| a.origin_id.cmp(&b.origin_id));
    if train.is_empty() {
        return Err(NetError::EmptyFold("train".into()));
    }
    let mut val: Vec<&ImageSample> = ds.in_fold(Fold::Val).collect();
    val.sort_by(|a, b| a.origin_id.cmp(&b.origin_id));
    if val.is_empty() {
        return Err(NetError::EmptyFold("val".into()));
    }

    let label_index: BTreeMap<&str, usize> = ds
        .parts
        .iter()
        .enumerate()
        .map(|(i, p)| (p.as_str(), i))
        .collect();

    // The extractor is frozen, so un-augmented features are computed once.
    let mut feature_cache: BTreeMap<&str, Tensor> = BTreeMap::new();
    for s in val.iter().chain(if cfg.augment { [].iter() } else { train.iter() }) {
        feature_cache.insert(&s.origin_id, extractor.features_for_sample(s)?);
    }

    let mut head = head_template.clone();
    head.init_params(cfg.seed);
    let mut velocity = momentum_buffers(&head);

    let mut history = Vec::new();
    let mut best_loss = f64::INFINITY;
    let mut best_epoch = 0usize;
    let mut best_params: Option<Head> = None;

    for epoch in 1..=cfg.epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "epoch-order", epoch as u64));
        order.shuffle(&mut rng);

        let mut epoch_loss = 0.0f64;
        for batch in order.chunks(cfg.batch) {
            let mut grad_acc = grad_buffers(&head);
            let mut batch_loss = 0.0f64;
            for &idx in batch {
                let sample = train[idx];
                let features = if cfg.augment {
                    let aug_seed = derive_seed(cfg.seed, &sample.origin_id, epoch as u64);
                    let img = train_augment(&sample.pixels, aug_seed);
                    extractor.features_for_image(&img)?
                } else {
                    feature_cache[sample.origin_id.as_str()].clone()
                };
                let mode = Mode::Train {
                    dropout_seed: derive_seed(cfg.seed, &sample.origin_id, 1_000_000 + epoch as u64),
                };
                let (logits, cache) = head.forward(&features, mode)?;
                let label = label_index[sample.label.as_str()];
                let (loss, d_logits) = softmax_xent(logits.data(), label);
                batch_loss += f64::from(loss);
                let grads = head.backward(&cache, &Tensor::new(vec![logits.len()], d_logits)?)?;
                accumulate(&mut grad_acc, &grads.linear);
            }
            epoch_loss += batch_loss;
            apply_sgd(&mut head, &mut velocity, &grad_acc, batch.len(), cfg);
        }
        let train_loss = epoch_loss / train.len() as f64;

        let (val_loss, val_accuracy) =
            validate(&head, &val, &feature_cache, &label_index)?;
        history.push(EpochStats {
            epoch,
            train_loss,
            val_loss,
            val_accuracy,
        });

        if val_loss < best_loss {
            best_loss = val_loss;
            best_epoch = epoch;
            best_params = Some(head.clone());
        } else if epoch - best_epoch > cfg.patience {
            break;
        }
    }

    Ok(TrainOutcome {
        head: best_params.expect("at least one epoch ran"),
        history,
        best_epoch,
    })
}

fn validate(
    head: &Head,
    val: &[&ImageSample],
    cache: &BTreeMap<&str, Tensor>,
    label_index: &BTreeMap<&str, usize>,
) -> Result<(f64, f64), NetError> {
    let mut loss = 0.0f64;
    let mut correct = 0usize;
    for s in val {
        let f = &cache[s.origin_id.as_str()];
        let (logits, _) = head.forward(f, Mode::Eval)?;
        let label = label_index[s.label.as_str()];
        let (l, _) = softmax_xent(logits.data(), label);
        loss += f64::from(l);
        let pred = logits
            .data()
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .unwrap();
        if pred == label {
            correct += 1;
        }
    }
    Ok((loss / val.len() as f64, correct as f64 / val.len() as f64))
}

type GradBuffers = Vec<Option<(Vec<f64>, Vec<f64>)>>;

fn grad_buffers(head: &Head) -> GradBuffers {
    head.layers()
        .iter()
        .map(|l| match l {
            Layer::Linear(lin) => Some((
                vec![0.0f64; lin.weight.len()],
                vec![0.0f64; lin.bias.len()],
            )),
            _ => None,
        })
        .collect()
}

fn accumulate(acc: &mut GradBuffers, grads: &[Option<(Vec<f32>, Vec<f32>)>]) {
    for (slot, g) in acc.iter_mut().zip(grads) {
        if let (Some((aw, ab)), Some((gw, gb))) = (slot.as_mut(), g.as_ref()) {
            for (a, v) in aw.iter_mut().zip(gw) {
                *a += f64::from(*v);
            }
            for (a, v) in ab.iter_mut().zip(gb) {
                *a += f64::from(*v);
            }
        }
    }
}

fn momentum_buffers(head: &Head) -> GradBuffers {
    grad_buffers(head)
}

fn apply_sgd(
    head: &mut Head,
    velocity: &mut GradBuffers,
    grads: &GradBuffers,
    batch_len: usize,
    cfg: &TrainConfig,
) {
    let scale = 1.0 / batch_len as f64;
    let mu = f64::from(cfg.momentum);
    let lr = f64::from(cfg.lr);
    let mut linears = head.linear_layers_mut();
    let mut li = 0usize;
    for (slot, vel) in grads.iter().zip(velocity.iter_mut()) {
        if let (Some((gw, gb)), Some((vw, vb))) = (slot.as_ref(), vel.as_mut()) {
            let lin = &mut linears[li];
            li += 1;
            for i in 0..lin.weight.len() {
                vw[i] = mu * vw[i] + gw[i] * scale;
                lin.weight[i] = (f64::from(lin.weight[i]) - lr * vw[i]) as f32;
            }
            for i in 0..lin.bias.len() {
                vb[i] = mu * vb[i] + gb[i] * scale;
                lin.bias[i] = (f64::from(lin.bias[i]) - lr * vb[i]) as f32;
            }
        }
    }
}

/// Train-time augmentation: horizontal flip, small rotation, random crop,
/// color jitter and random grayscale. Magnitudes are mild defaults.
pub fn train_augment(img: &RgbImage, seed: u64) -> RgbImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = img.clone();
    if rng.gen_bool(0.5) {
        out = image::imageops::flip_horizontal(&out);
    }
    let angle = rng.gen_range(-15.0f64..=15.0).to_radians();
    out = crate::datakit::warp(&out, angle, 0.0);
    // Random crop back to full size.
    let (w, h) = out.dimensions();
    let scale = rng.gen_range(0.8f64..=1.0);
    let cw = ((f64::from(w) * scale).round() as u32).max(1);
    let ch = ((f64::from(h) * scale).round() as u32).max(1);
    let x0 = rng.gen_range(0..=(w - cw));
    let y0 = rng.gen_range(0..=(h - ch));
    let cropped = image::imageops::crop_imm(&out, x0, y0, cw, ch).to_image();
    out = image::imageops::resize(&cropped, w, h, image::imageops::FilterType::Triangle);
    // Color jitter.
    let brightness = rng.gen_range(0.8f32..=1.2);
    let contrast = rng.gen_range(0.8f32..=1.2);
    for p in out.pixels_mut() {
        for c in 0..3 {
            let v = (f32::from(p[c]) * brightness - 128.0) * contrast + 128.0;
            p[c] = v.round().clamp(0.0, 255.0) as u8;
        }
    }
    if rng.gen_bool(0.1) {
        for p in out.pixels_mut() {
            let l = (0.299 * f32::from(p[0]) + 0.587 * f32::from(p[1]) + 0.114 * f32::from(p[2]))
                .round()
                .clamp(0.0, 255.0) as u8;
            *p = image::Rgb([l, l, l]);
        }
    }
    out
}
