//! Embedding-space backends and the frame-level GMM baseline.

pub mod gmm;
pub mod lda;
pub mod plda;

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use gmm::{gmm_frame_llr, GmmModel, GmmPair, GmmTrainLog};
pub use lda::LdaGaussianizer;
pub use plda::{EnrollStats, PldaModel, PldaTrainLog};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BackendConfig {
    /// Upper bound on the LDA output; also capped at classes - 1.
    pub lda_dim: usize,
    /// Upper bound on the PLDA subspace rank; also capped at the LDA output.
    pub plda_rank: usize,
    pub plda_iters: usize,
    /// Share of training utterances per label held out for enrollment.
    pub enroll_fraction: f64,
    pub gmm_components: usize,
    pub gmm_iters: usize,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            lda_dim: 19,
            plda_rank: 16,
            plda_iters: 20,
            enroll_fraction: 0.2,
            gmm_components: 64,
            gmm_iters: 20,
        }
    }
}

/// Window embeddings of one training utterance.
#[derive(Debug, Clone)]
pub struct UtteranceEmbeddings {
    pub embeddings: Vec<Vec<f64>>,
    /// 0 pristine, 1 spoof.
    pub label: u8,
    pub class_id: String,
}

/// Gaussianizer, PLDA model and the two enrollment sides.
#[derive(Debug, Clone, PartialEq)]
pub struct Backend {
    pub lda: LdaGaussianizer,
    pub plda: PldaModel,
    pub pristine: EnrollStats,
    pub spoof: EnrollStats,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackendTrainLog {
    pub lda_dim: usize,
    pub plda_rank: usize,
    pub n_train_utterances: usize,
    pub n_enroll_utterances: usize,
    pub plda: PldaTrainLog,
}

impl Backend {
    /// Holds out a seeded share of each label's utterances for enrollment and
    /// fits LDA and PLDA on the rest, with `class_id` as the class.
    pub fn train(utterances: &[UtteranceEmbeddings], cfg: &BackendConfig, seed: u64) -> Result<(Self, BackendTrainLog)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut enroll = [Vec::new(), Vec::new()];
        let mut train = Vec::new();
        for label in [0u8, 1] {
            let mut idx: Vec<usize> = (0..utterances.len()).filter(|&i| utterances[i].label == label).collect();
            if idx.len() < 2 {
                return Err(Error::InsufficientData(format!(
                    "backend needs >= 2 utterances per label, label {label} has {}",
                    idx.len()
                )));
            }
            idx.shuffle(&mut rng);
            let k = ((cfg.enroll_fraction * idx.len() as f64).round() as usize).clamp(1, idx.len() - 1);
            enroll[label as usize] = idx[..k].to_vec();
            train.extend_from_slice(&idx[k..]);
        }
        train.sort_unstable();
        let mut class_index = BTreeMap::new();
        for &i in &train {
            let next = class_index.len();
            class_index.entry(utterances[i].class_id.as_str()).or_insert(next);
        }
        let mut x = Vec::new();
        let mut ids = Vec::new();
        for &i in &train {
            for e in &utterances[i].embeddings {
                x.push(e.clone());
                ids.push(class_index[utterances[i].class_id.as_str()]);
            }
        }
        let dim = x.first().map_or(0, Vec::len);
        let lda_dim = cfg.lda_dim.min(class_index.len().saturating_sub(1)).min(dim);
        let lda = LdaGaussianizer::train(&x, &ids, lda_dim)?;
        let g = x.iter().map(|v| lda.gaussianize(v)).collect::<Result<Vec<_>>>()?;
        let rank = cfg.plda_rank.min(lda_dim);
        let (plda, plda_log) = PldaModel::train_em(&g, &ids, rank, cfg.plda_iters, seed)?;
        let side = |which: &[usize]| -> Result<EnrollStats> {
            let mut v = Vec::new();
            for &i in which {
                for e in &utterances[i].embeddings {
                    v.push(lda.gaussianize(e)?);
                }
            }
            EnrollStats::from_embeddings(&v)
        };
        let backend = Self {
            pristine: side(&enroll[0])?,
            spoof: side(&enroll[1])?,
            lda,
            plda,
        };
        let log = BackendTrainLog {
            lda_dim,
            plda_rank: rank,
            n_train_utterances: train.len(),
            n_enroll_utterances: enroll[0].len() + enroll[1].len(),
            plda: plda_log,
        };
        Ok((backend, log))
    }

    /// Spoof-versus-pristine score of one raw embedding.
    pub fn score(&self, embedding: &[f64]) -> Result<f64> {
        let g = self.lda.gaussianize(embedding)?;
        self.plda.detection_score_stats(&self.pristine, &self.spoof, &g)
    }
}
