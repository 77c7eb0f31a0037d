//! Diagonal-covariance Gaussian mixture for the frame-level baseline.

use std::f64::consts::PI;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::scoring::ScoreSeries;

pub const VARIANCE_FLOOR: f64 = 1e-6;
const KMEANS_ITERS: usize = 5;

#[derive(Debug, Clone, PartialEq)]
pub struct GmmModel {
    pub weights: Vec<f64>,
    /// `K x D`, row-major.
    pub means: Vec<f64>,
    /// `K x D`, row-major.
    pub variances: Vec<f64>,
    pub dim: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GmmTrainLog {
    /// Total log-likelihood of the training frames after each iteration.
    pub log_likelihood: Vec<f64>,
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

impl GmmModel {
    pub fn n_components(&self) -> usize {
        self.weights.len()
    }

    /// Per-component `log w_k + log N(x; m_k, v_k)`.
    fn component_log_densities(&self, x: &[f64], out: &mut [f64]) {
        let d = self.dim;
        let c = d as f64 * (2.0 * PI).ln();
        for (k, o) in out.iter_mut().enumerate() {
            let m = &self.means[k * d..(k + 1) * d];
            let v = &self.variances[k * d..(k + 1) * d];
            let mut q = c;
            for j in 0..d {
                let r = x[j] - m[j];
                q += v[j].ln() + r * r / v[j];
            }
            *o = self.weights[k].ln() - 0.5 * q;
        }
    }

    pub fn log_density(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: x.len() });
        }
        let mut buf = vec![0.0; self.n_components()];
        self.component_log_densities(x, &mut buf);
        Ok(log_sum_exp(&buf))
    }

    /// EM from a seeded k-means initialization.
    pub fn train_em(frames: &[&[f64]], n_components: usize, n_iters: usize, seed: u64) -> Result<(Self, GmmTrainLog)> {
        let n = frames.len();
        if n_components == 0 || n < n_components {
            return Err(Error::TooFewFrames {
                frames: n,
                components: n_components,
            });
        }
        let d = frames[0].len();
        if let Some(f) = frames.iter().find(|f| f.len() != d) {
            return Err(Error::DimensionMismatch { expected: d, got: f.len() });
        }
        let mut model = Self::kmeans_init(frames, n_components, seed);
        let mut log = GmmTrainLog {
            log_likelihood: Vec::with_capacity(n_iters),
        };
        let k = n_components;
        let mut resp = vec![0.0; k];
        for _ in 0..n_iters {
            let mut nk = vec![0.0; k];
            let mut s1 = vec![0.0; k * d];
            let mut s2 = vec![0.0; k * d];
            for x in frames {
                model.component_log_densities(x, &mut resp);
                let lse = log_sum_exp(&resp);
                for c in 0..k {
                    let g = (resp[c] - lse).exp();
                    nk[c] += g;
                    for j in 0..d {
                        s1[c * d + j] += g * x[j];
                        s2[c * d + j] += g * x[j] * x[j];
                    }
                }
            }
            for c in 0..k {
                model.weights[c] = nk[c] / n as f64;
                if nk[c] < 1e-10 {
                    continue;
                }
                for j in 0..d {
                    let m = s1[c * d + j] / nk[c];
                    model.means[c * d + j] = m;
                    model.variances[c * d + j] = (s2[c * d + j] / nk[c] - m * m).max(VARIANCE_FLOOR);
                }
            }
            log.log_likelihood.push(model.total_log_likelihood(frames));
        }
        Ok((model, log))
    }

    pub fn total_log_likelihood(&self, frames: &[&[f64]]) -> f64 {
        let mut buf = vec![0.0; self.n_components()];
        frames
            .iter()
            .map(|x| {
                self.component_log_densities(x, &mut buf);
                log_sum_exp(&buf)
            })
            .sum()
    }

    fn kmeans_init(frames: &[&[f64]], k: usize, seed: u64) -> Self {
        let n = frames.len();
        let d = frames[0].len();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut idx: Vec<usize> = sample(&mut rng, n, k).into_vec();
        idx.sort_unstable();
        let mut centres: Vec<f64> = idx.iter().flat_map(|&i| frames[i].iter().copied()).collect();
        let mut assign = vec![0usize; n];
        let dist = |x: &[f64], c: &[f64]| x.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        for iter in 0..=KMEANS_ITERS {
            for (i, x) in frames.iter().enumerate() {
                assign[i] = (0..k)
                    .min_by(|&a, &b| dist(x, &centres[a * d..(a + 1) * d]).total_cmp(&dist(x, &centres[b * d..(b + 1) * d])))
                    .unwrap();
            }
            if iter == KMEANS_ITERS {
                break;
            }
            let mut sums = vec![0.0; k * d];
            let mut counts = vec![0usize; k];
            for (i, x) in frames.iter().enumerate() {
                counts[assign[i]] += 1;
                for j in 0..d {
                    sums[assign[i] * d + j] += x[j];
                }
            }
            for c in 0..k {
                if counts[c] > 0 {
                    for j in 0..d {
                        centres[c * d + j] = sums[c * d + j] / counts[c] as f64;
                    }
                }
            }
        }
        let global_mean: Vec<f64> = (0..d).map(|j| frames.iter().map(|x| x[j]).sum::<f64>() / n as f64).collect();
        let global_var: Vec<f64> = (0..d)
            .map(|j| {
                (frames.iter().map(|x| (x[j] - global_mean[j]).powi(2)).sum::<f64>() / n as f64).max(VARIANCE_FLOOR)
            })
            .collect();
        let mut counts = vec![0usize; k];
        let mut var = vec![0.0; k * d];
        for (i, x) in frames.iter().enumerate() {
            let c = assign[i];
            counts[c] += 1;
            for j in 0..d {
                var[c * d + j] += (x[j] - centres[c * d + j]).powi(2);
            }
        }
        for c in 0..k {
            for j in 0..d {
                var[c * d + j] = if counts[c] > 1 {
                    (var[c * d + j] / counts[c] as f64).max(VARIANCE_FLOOR)
                } else {
                    global_var[j]
                };
            }
        }
        let weights = counts.iter().map(|&c| c.max(1) as f64).collect::<Vec<_>>();
        let total: f64 = weights.iter().sum();
        Self {
            weights: weights.iter().map(|w| w / total).collect(),
            means: centres,
            variances: var,
            dim: d,
        }
    }
}

/// Spoof and pristine mixtures of the frame-level baseline.
#[derive(Debug, Clone, PartialEq)]
pub struct GmmPair {
    pub spoof: GmmModel,
    pub pristine: GmmModel,
}

impl GmmPair {
    pub fn frame_llr(&self, features: &FeatureMatrix) -> Result<ScoreSeries> {
        gmm_frame_llr(&self.spoof, &self.pristine, features)
    }
}

/// Per-frame `log p(x | spoof) - log p(x | pristine)`.
pub fn gmm_frame_llr(spoof: &GmmModel, pristine: &GmmModel, features: &FeatureMatrix) -> Result<ScoreSeries> {
    for m in [spoof, pristine] {
        if m.dim != features.dim() {
            return Err(Error::DimensionMismatch {
                expected: m.dim,
                got: features.dim(),
            });
        }
    }
    let values = features
        .rows()
        .map(|x| Ok(spoof.log_density(x)? - pristine.log_density(x)?))
        .collect::<Result<Vec<f64>>>()?;
    ScoreSeries::new(values, 1, "gmm")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::FeatureKind;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn one_d(mean: f64) -> GmmModel {
        GmmModel {
            weights: vec![1.0],
            means: vec![mean],
            variances: vec![1.0],
            dim: 1,
        }
    }

    #[test]
    fn frame_llr_by_hand() {
        let f = FeatureMatrix::new(vec![0.0, 1.0, -2.0], 3, 1, FeatureKind::Generic).unwrap();
        let s = gmm_frame_llr(&one_d(1.0), &one_d(-1.0), &f).unwrap();
        assert_eq!(s.len(), 3);
        assert!(s.values[0].abs() < 1e-12);
        assert!((s.values[1] - 2.0).abs() < 1e-12);
        assert!((s.values[2] + 4.0).abs() < 1e-12);
        let same = gmm_frame_llr(&one_d(0.3), &one_d(0.3), &f).unwrap();
        assert!(same.values.iter().all(|&v| v == 0.0));
        let wide = FeatureMatrix::new(vec![0.0; 4], 2, 2, FeatureKind::Generic).unwrap();
        assert!(matches!(gmm_frame_llr(&one_d(0.0), &one_d(0.0), &wide), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn single_component_is_sample_statistics() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let data: Vec<Vec<f64>> = (0..200)
            .map(|_| vec![rng.sample::<f64, _>(StandardNormal) * 2.0 + 1.0, rng.random_range(-1.0..3.0)])
            .collect();
        let frames: Vec<&[f64]> = data.iter().map(|v| v.as_slice()).collect();
        let (g, _) = GmmModel::train_em(&frames, 1, 3, 0).unwrap();
        for j in 0..2 {
            let m = data.iter().map(|v| v[j]).sum::<f64>() / 200.0;
            let v = data.iter().map(|x| (x[j] - m).powi(2)).sum::<f64>() / 200.0;
            assert!((g.means[j] - m).abs() < 1e-9);
            assert!((g.variances[j] - v).abs() < 1e-9);
        }
        assert_eq!(g.weights, vec![1.0]);
    }

    #[test]
    fn finds_two_clusters() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let data: Vec<Vec<f64>> = (0..400)
            .map(|i| {
                let c = if i % 2 == 0 { -5.0 } else { 5.0 };
                vec![c + rng.sample::<f64, _>(StandardNormal), rng.sample::<f64, _>(StandardNormal)]
            })
            .collect();
        let frames: Vec<&[f64]> = data.iter().map(|v| v.as_slice()).collect();
        let (g, log) = GmmModel::train_em(&frames, 2, 20, 3).unwrap();
        let mut xs = [g.means[0], g.means[2]];
        xs.sort_by(f64::total_cmp);
        assert!((xs[0] + 5.0).abs() < 0.1 && (xs[1] - 5.0).abs() < 0.1, "{xs:?}");
        assert!((g.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for w in log.log_likelihood.windows(2) {
            assert!(w[1] >= w[0] - 1e-8);
        }
    }

    #[test]
    fn variance_floor_and_too_few_frames() {
        let data = [vec![1.0], vec![1.0], vec![1.0]];
        let frames: Vec<&[f64]> = data.iter().map(|v| v.as_slice()).collect();
        let (g, _) = GmmModel::train_em(&frames, 1, 2, 0).unwrap();
        assert_eq!(g.variances, vec![VARIANCE_FLOOR]);
        assert!(matches!(GmmModel::train_em(&frames, 4, 2, 0), Err(Error::TooFewFrames { .. })));
    }
}
