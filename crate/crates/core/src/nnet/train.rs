//! OC-Softmax training with Adam and dev-EER early stopping.

use std::fmt;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::{AdamConfig, AdamState};
use super::embed::{crop_frames, crops_to_input};
use super::loss::{oc_softmax_loss, OcSoftmaxConfig};
use super::param::Grads;
use super::xresnet::XResNet;
use crate::augment::{frequency_mask_with, FreqMaskConfig};
use crate::error::{Error, Result};
use crate::features::{FeatureKind, FeatureMatrix, LFB_DIM};
use crate::scoring::compute_eer;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub max_epochs: usize,
    /// Epochs without a strict dev-EER improvement tolerated before stopping.
    pub patience: usize,
    pub batch_size: usize,
    pub crop_frames: usize,
    pub mask: FreqMaskConfig,
    pub adam: AdamConfig,
    pub loss: OcSoftmaxConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            max_epochs: 20,
            patience: 12,
            batch_size: 64,
            crop_frames: 500,
            mask: FreqMaskConfig::default(),
            adam: AdamConfig::default(),
            loss: OcSoftmaxConfig::default(),
        }
    }
}

/// LFB features with their label (0 pristine, 1 spoof).
#[derive(Debug, Clone)]
pub struct Example {
    pub features: FeatureMatrix,
    pub label: u8,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_eer: f64,
    pub improved: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingLog {
    pub seed: u64,
    pub epochs: Vec<EpochLog>,
    /// 1-based epoch of the retained checkpoint.
    pub best_epoch: usize,
    pub best_eer: f64,
}

impl fmt::Display for TrainingLog {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "# seed {}", self.seed)?;
        writeln!(f, "epoch\ttrain_loss\tdev_eer\timproved")?;
        for e in &self.epochs {
            writeln!(f, "{}\t{:?}\t{:?}\t{}", e.epoch, e.train_loss, e.dev_eer, e.improved)?;
        }
        write!(f, "# best epoch {} dev_eer {:?}", self.best_epoch, self.best_eer)
    }
}

/// Negated head cosine: higher means more spoof-like.
pub fn dnn_scores(model: &XResNet<f32>, examples: &[Example], crop: usize) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(examples.len());
    for chunk in examples.chunks(8) {
        let crops: Vec<Vec<f64>> = chunk.iter().map(|e| crop_frames(&e.features, 0, crop)).collect();
        let emb = model.embed(&crops_to_input::<f32>(&crops, crop, LFB_DIM))?;
        let e = model.config.embedding_dim;
        out.extend(emb.data.chunks_exact(e).map(|v| -(model.score(v) as f64)));
    }
    Ok(out)
}

pub fn dev_eer(model: &XResNet<f32>, dev: &[Example], crop: usize) -> Result<f64> {
    let scores = dnn_scores(model, dev, crop)?;
    let (mut spoof, mut pristine) = (Vec::new(), Vec::new());
    for (s, e) in scores.iter().zip(dev) {
        if e.label == 1 { spoof.push(*s) } else { pristine.push(*s) }
    }
    Ok(compute_eer(&spoof, &pristine)?.eer)
}

fn check_examples(examples: &[Example], what: &str, both_classes: bool) -> Result<()> {
    if examples.is_empty() {
        return Err(Error::InsufficientData(format!("no {what} examples")));
    }
    if let Some(e) = examples.iter().find(|e| e.features.kind() != FeatureKind::Lfb || e.features.n_frames() == 0) {
        return Err(Error::InsufficientData(format!(
            "{what} example with {:?} features and {} frames",
            e.features.kind(),
            e.features.n_frames()
        )));
    }
    if both_classes && !(examples.iter().any(|e| e.label == 0) && examples.iter().any(|e| e.label == 1)) {
        return Err(Error::InsufficientData(format!("{what} set needs both pristine and spoof examples")));
    }
    Ok(())
}

/// Random crop of `len` frames, zero-padded when the input is shorter.
fn random_crop(features: &FeatureMatrix, len: usize, rng: &mut impl Rng) -> Result<FeatureMatrix> {
    let start = if features.n_frames() > len {
        rng.random_range(0..=features.n_frames() - len)
    } else {
        0
    };
    FeatureMatrix::new(crop_frames(features, start, len), len, features.dim(), FeatureKind::Lfb)
}

/// Per epoch: shuffled batches of frequency-masked random crops, one Adam
/// step per batch, then a dev EER. Returns the best-EER checkpoint.
pub fn train(
    mut model: XResNet<f32>,
    train_set: &[Example],
    dev_set: &[Example],
    cfg: &TrainConfig,
    seed: u64,
) -> Result<(XResNet<f32>, TrainingLog)> {
    check_examples(train_set, "training", false)?;
    check_examples(dev_set, "dev", true)?;
    if cfg.batch_size == 0 || cfg.crop_frames < model.config.min_frames() {
        return Err(Error::InvalidConfig(format!(
            "batch size {} / crop {} frames (network needs >= {})",
            cfg.batch_size,
            cfg.crop_frames,
            model.config.min_frames()
        )));
    }
    cfg.loss.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut adam = AdamState::new(&model, cfg.adam);
    let mut best = model.clone();
    let mut log = TrainingLog {
        seed,
        epochs: Vec::new(),
        best_epoch: 0,
        best_eer: f64::INFINITY,
    };
    let mut stale = 0;
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut n_batches) = (0.0, 0);
        for batch in order.chunks(cfg.batch_size) {
            let mut crops = Vec::with_capacity(batch.len());
            let mut labels = Vec::with_capacity(batch.len());
            for &i in batch {
                let crop = random_crop(&train_set[i].features, cfg.crop_frames, &mut rng)?;
                let masked = frequency_mask_with(&crop, &cfg.mask, &mut rng)?;
                crops.push(masked.values().to_vec());
                labels.push(train_set[i].label);
            }
            let x = crops_to_input::<f32>(&crops, cfg.crop_frames, LFB_DIM);
            let cache = model.forward_train(&x)?;
            let scores: Vec<f64> = model.scores(&cache).iter().map(|&s| s as f64).collect();
            let (loss, dscores) = oc_softmax_loss(&scores, &labels, &cfg.loss)?;
            if !loss.is_finite() {
                return Err(Error::Numeric(format!("loss diverged in epoch {epoch}")));
            }
            let dscores: Vec<f32> = dscores.iter().map(|&g| g as f32).collect();
            let mut grads = Grads::zeros_like(&model);
            model.backward(&cache, &dscores, &mut grads);
            adam.step(&mut model, &grads)?;
            loss_sum += loss;
            n_batches += 1;
        }
        let eer = dev_eer(&model, dev_set, cfg.crop_frames)?;
        let improved = eer < log.best_eer;
        if improved {
            log.best_eer = eer;
            log.best_epoch = epoch;
            best = model.clone();
            stale = 0;
        } else {
            stale += 1;
        }
        let train_loss = loss_sum / n_batches as f64;
        log::info!("epoch {epoch}: loss {train_loss:.5} dev EER {:.2}%", 100.0 * eer);
        log.epochs.push(EpochLog {
            epoch,
            train_loss,
            dev_eer: eer,
            improved,
        });
        if stale > cfg.patience {
            break;
        }
    }
    Ok((best, log))
}
