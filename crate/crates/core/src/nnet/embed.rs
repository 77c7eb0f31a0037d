//! Sliding-window embedding extraction.

use serde::{Deserialize, Serialize};

use super::param::Tensor;
use super::real::Real;
use super::xresnet::XResNet;
use crate::error::{Error, Result};
use crate::features::FeatureMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WindowConfig {
    pub window: usize,
    pub shift: usize,
}

impl Default for WindowConfig {
    fn default() -> Self {
        Self { window: 500, shift: 10 }
    }
}

impl WindowConfig {
    /// Number of windows for `n_frames` frames; a short input still gets one
    /// (zero-padded) window.
    pub fn n_windows(&self, n_frames: usize) -> usize {
        if n_frames <= self.window {
            1
        } else {
            1 + (n_frames - self.window) / self.shift
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    pub vector: Vec<f64>,
    pub start_frame: usize,
    /// The window ran past the end of the input and was filled with zeros.
    pub padded: bool,
}

/// Copies frames `[start, start + len)` as a row-major `len x D` block,
/// zero-filling past the end.
pub fn crop_frames(features: &FeatureMatrix, start: usize, len: usize) -> Vec<f64> {
    let d = features.dim();
    let mut out = vec![0.0; len * d];
    let end = (start + len).min(features.n_frames());
    if start < end {
        out[..(end - start) * d].copy_from_slice(&features.values()[start * d..end * d]);
    }
    out
}

/// Stacks row-major `T x D` crops into a network input `[N, 1, D, T]`.
pub fn crops_to_input<T: Real>(crops: &[Vec<f64>], n_frames: usize, dim: usize) -> Tensor<T> {
    let mut data = vec![T::zero(); crops.len() * dim * n_frames];
    for (i, crop) in crops.iter().enumerate() {
        let out = &mut data[i * dim * n_frames..(i + 1) * dim * n_frames];
        for t in 0..n_frames {
            for f in 0..dim {
                out[f * n_frames + t] = T::lit(crop[t * dim + f]);
            }
        }
    }
    Tensor::from_vec([crops.len(), 1, dim, n_frames], data)
}

const EMBED_BATCH: usize = 8;

/// Embeddings for windows `[k * shift, k * shift + window)` in order.
pub fn extract_embeddings<T: Real>(model: &XResNet<T>, features: &FeatureMatrix, cfg: &WindowConfig) -> Result<Vec<Embedding>> {
    if features.n_frames() == 0 {
        return Err(Error::EmptyFeatures);
    }
    if cfg.window == 0 || cfg.shift == 0 {
        return Err(Error::InvalidConfig("window and shift must be positive".into()));
    }
    let n = cfg.n_windows(features.n_frames());
    let padded = features.n_frames() < cfg.window;
    let e = model.config.embedding_dim;
    let mut out = Vec::with_capacity(n);
    let starts: Vec<usize> = (0..n).map(|k| k * cfg.shift).collect();
    for chunk in starts.chunks(EMBED_BATCH) {
        let crops: Vec<Vec<f64>> = chunk.iter().map(|&s| crop_frames(features, s, cfg.window)).collect();
        let x = crops_to_input::<T>(&crops, cfg.window, features.dim());
        let emb = model.embed(&x)?;
        for (k, &s) in chunk.iter().enumerate() {
            out.push(Embedding {
                vector: emb.data[k * e..(k + 1) * e].iter().map(|v| v.as_f64()).collect(),
                start_frame: s,
                padded,
            });
        }
    }
    Ok(out)
}
