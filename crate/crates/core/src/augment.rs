//! Training-time augmentation: additive noise at a target SNR and
//! frequency-band masking of feature matrices.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::audio::AudioBuffer;
use crate::error::{Error, Result};
use crate::features::FeatureMatrix;

pub const DEFAULT_SNR_DB: f64 = 5.0;

pub fn rms(x: &[f32]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    (x.iter().map(|&v| v as f64 * v as f64).sum::<f64>() / x.len() as f64).sqrt()
}

/// Result of [`mix_at_snr`].
#[derive(Debug, Clone)]
pub struct Mix {
    pub audio: AudioBuffer,
    /// Gain applied to the noise crop.
    pub gain: f64,
    /// Start of the noise crop, in samples.
    pub offset: usize,
    /// Factor applied to the sum to keep every sample in [-1, 1] (1 if no clipping).
    pub peak_scale: f64,
}

/// Adds a randomly positioned crop of `noise` to `clean` so that the two
/// addends sit `snr_db` apart. If the sum clips, the whole signal is
/// rescaled, which keeps the component ratio intact.
pub fn mix_at_snr(clean: &AudioBuffer, noise: &AudioBuffer, snr_db: f64, seed: u64) -> Result<Mix> {
    if clean.sample_rate() != noise.sample_rate() {
        return Err(Error::UnsupportedFormat(format!(
            "sample rates differ: {} vs {}",
            clean.sample_rate(),
            noise.sample_rate()
        )));
    }
    if noise.len() < clean.len() {
        return Err(Error::TooShort {
            needed: clean.len(),
            got: noise.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let offset = rng.random_range(0..=noise.len() - clean.len());
    let crop = &noise.samples()[offset..offset + clean.len()];
    let (rc, rn) = (rms(clean.samples()), rms(crop));
    if rc == 0.0 || rn == 0.0 {
        return Err(Error::ZeroPower);
    }
    let gain = rc / rn * 10f64.powf(-snr_db / 20.0);
    let mixed: Vec<f64> = clean
        .samples()
        .iter()
        .zip(crop)
        .map(|(&c, &n)| c as f64 + gain * n as f64)
        .collect();
    let peak = mixed.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let peak_scale = if peak > 1.0 { 1.0 / peak } else { 1.0 };
    let samples = mixed
        .iter()
        .map(|&v| ((v * peak_scale) as f32).clamp(-1.0, 1.0))
        .collect();
    Ok(Mix {
        audio: AudioBuffer::new(samples, clean.sample_rate())?,
        gain,
        offset,
        peak_scale,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FreqMaskConfig {
    pub n_masks: usize,
    /// Largest band width in feature channels.
    pub max_width: usize,
}

impl Default for FreqMaskConfig {
    fn default() -> Self {
        Self {
            n_masks: 2,
            max_width: 7,
        }
    }
}

/// Bands `[start, start + width)` chosen for one masking call.
pub fn sample_bands(dim: usize, cfg: &FreqMaskConfig, rng: &mut impl Rng) -> Vec<(usize, usize)> {
    (0..cfg.n_masks)
        .map(|_| {
            let width = rng.random_range(1..=cfg.max_width);
            let start = rng.random_range(0..=dim - width);
            (start, width)
        })
        .collect()
}

/// Overwrites `n_masks` random bands of feature channels (all frames) with
/// the global mean of the unmasked input.
pub fn frequency_mask(features: &FeatureMatrix, cfg: &FreqMaskConfig, seed: u64) -> Result<FeatureMatrix> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    frequency_mask_with(features, cfg, &mut rng)
}

pub fn frequency_mask_with(features: &FeatureMatrix, cfg: &FreqMaskConfig, rng: &mut impl Rng) -> Result<FeatureMatrix> {
    let dim = features.dim();
    if cfg.max_width == 0 || dim < cfg.max_width {
        return Err(Error::InvalidConfig(format!(
            "mask width {} incompatible with {dim} channels",
            cfg.max_width
        )));
    }
    let fill = features.mean();
    let mut values = features.values().to_vec();
    for (start, width) in sample_bands(dim, cfg, rng) {
        for row in values.chunks_exact_mut(dim) {
            row[start..start + width].fill(fill);
        }
    }
    Ok(features.with_values(values))
}
