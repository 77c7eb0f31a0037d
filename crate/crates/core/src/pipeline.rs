//! Utterance scoring: features, speech mask, window embeddings, backend
//! scores and both poolings.

use crate::audio::AudioBuffer;
use crate::backend::{Backend, GmmPair};
use crate::error::Result;
use crate::features::{lfb, FeatureMatrix};
use crate::nnet::{extract_embeddings, WindowConfig, XResNet};
use crate::sad::{apply_mask, detect_speech, SadConfig, SadModel};
use crate::scoring::{interleaved_aware, score_average, PoolingConfig, ScoreSeries};

/// Trained models and the settings that connect them.
#[derive(Debug, Clone)]
pub struct Detector {
    /// Without a SAD model every frame is kept.
    pub sad: Option<SadModel<f32>>,
    pub sad_config: SadConfig,
    pub network: XResNet<f32>,
    pub window: WindowConfig,
    pub backend: Backend,
    pub pooling: PoolingConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UtteranceScore {
    pub avg: f64,
    pub interleaved: f64,
    pub series: ScoreSeries,
}

impl Detector {
    /// Backend score of every embedding window of already-masked features.
    pub fn window_scores(&self, features: &FeatureMatrix) -> Result<ScoreSeries> {
        let embeddings = extract_embeddings(&self.network, features, &self.window)?;
        let values = embeddings
            .iter()
            .map(|e| self.backend.score(&e.vector))
            .collect::<Result<Vec<f64>>>()?;
        ScoreSeries::new(values, self.window.shift, "plda")
    }

    pub fn pool(&self, series: ScoreSeries) -> Result<UtteranceScore> {
        pool(series, &self.pooling)
    }

    /// Speech-masked LFB features of an utterance.
    pub fn masked_features(&self, audio: &AudioBuffer) -> Result<FeatureMatrix> {
        let feats = lfb(audio)?;
        match &self.sad {
            Some(sad) => apply_mask(&feats, &detect_speech(sad, audio, &self.sad_config)?),
            None => Ok(feats),
        }
    }

    pub fn score_utterance(&self, audio: &AudioBuffer) -> Result<UtteranceScore> {
        self.pool(self.window_scores(&self.masked_features(audio)?)?)
    }
}

/// Frame-level GMM baseline: per-frame log-likelihood ratios of already
/// masked features, pooled both ways.
pub fn score_gmm(pair: &GmmPair, features: &FeatureMatrix, pooling: &PoolingConfig) -> Result<UtteranceScore> {
    pool(pair.frame_llr(features)?, pooling)
}

fn pool(series: ScoreSeries, cfg: &PoolingConfig) -> Result<UtteranceScore> {
    Ok(UtteranceScore {
        avg: score_average(&series)?,
        interleaved: interleaved_aware(&series, cfg)?,
        series,
    })
}
