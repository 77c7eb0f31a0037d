//! Speech activity detection: stacked MFCC context through a small MLP,
//! smoothed posteriors, thresholding and padded segments.

use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::audio::AudioBuffer;
use crate::error::{Error, Result};
use crate::features::{frame_signal, mfcc, mvn_sliding, FeatureKind, FeatureMatrix, FRAME_LEN_S, FRAME_SHIFT_S, MFCC_DIM};
use crate::nnet::adam::{AdamConfig, AdamState};
use crate::nnet::layers::{relu, relu_backward, Linear};
use crate::nnet::param::{Grads, Module, Param, ParamBuilder, Tensor};
use crate::nnet::real::Real;
use crate::scoring::{moving_average, ScoreSeries};

pub const CONTEXT_FRAMES: usize = 31;
pub const SAD_INPUT_DIM: usize = MFCC_DIM * CONTEXT_FRAMES;
pub const HIDDEN: [usize; 2] = [500, 100];
/// Timestamps are compared with this much slack so that segment edges
/// computed from frame indices select exactly those frames.
const TIME_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SadConfig {
    pub mvn_window_s: f64,
    pub smooth_s: f64,
    pub threshold: f64,
    pub pad_s: f64,
}

impl Default for SadConfig {
    fn default() -> Self {
        Self {
            mvn_window_s: 0.5,
            smooth_s: 0.5,
            threshold: 0.5,
            pad_s: 1.0 / 3.0,
        }
    }
}

/// Row `t` concatenates frames `t - c/2 ..= t + c/2`, edges replicated.
pub fn stack_context(mfcc: &FeatureMatrix, context: usize) -> Result<FeatureMatrix> {
    let n = mfcc.n_frames();
    if n == 0 {
        return Err(Error::EmptyFeatures);
    }
    let d = mfcc.dim();
    let half = (context / 2) as isize;
    let mut out = Vec::with_capacity(n * d * context);
    for t in 0..n as isize {
        for o in -half..=half {
            let s = (t + o).clamp(0, n as isize - 1) as usize;
            out.extend_from_slice(mfcc.row(s));
        }
    }
    FeatureMatrix::new(out, n, d * context, FeatureKind::Generic)
}

/// MFCC, sliding normalization and context stacking.
pub fn sad_input(audio: &AudioBuffer, cfg: &SadConfig) -> Result<FeatureMatrix> {
    let m = mfcc(audio)?;
    let normed = mvn_sliding(&m, (cfg.mvn_window_s / FRAME_SHIFT_S).round() as usize)?;
    stack_context(&normed, CONTEXT_FRAMES)
}

/// Feed-forward 620-500-100-2 network; output index 1 is speech.
#[derive(Debug, Clone, PartialEq)]
pub struct SadModel<T = f32> {
    pub layers: [Linear<T>; 3],
}

impl<T: Real> Module<T> for SadModel<T> {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&'a Param<T>)) {
        self.layers.iter().for_each(|l| l.visit(f));
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        self.layers.iter_mut().for_each(|l| l.visit_mut(f));
    }
}

struct SadCache<T> {
    x: Tensor<T>,
    h1: Tensor<T>,
    h2: Tensor<T>,
}

fn softmax2<T: Real>(a: T, b: T) -> (T, T) {
    let m = a.max(b);
    let (ea, eb) = ((a - m).exp(), (b - m).exp());
    let s = ea + eb;
    (ea / s, eb / s)
}

impl<T: Real> SadModel<T> {
    pub fn build(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pb = ParamBuilder::new(&mut rng);
        let dims = [SAD_INPUT_DIM, HIDDEN[0], HIDDEN[1], 2];
        let mk = |pb: &mut ParamBuilder<'_, ChaCha8Rng>, i: usize| {
            Linear::new(pb, &format!("fc{}", i + 1), dims[i], dims[i + 1], (2.0 / dims[i] as f64).sqrt())
        };
        let layers = [mk(&mut pb, 0), mk(&mut pb, 1), mk(&mut pb, 2)];
        Self { layers }
    }

    fn forward_cached(&self, x: Tensor<T>) -> (Tensor<T>, SadCache<T>) {
        let h1 = relu(&self.layers[0].forward(&x));
        let h2 = relu(&self.layers[1].forward(&h1));
        let logits = self.layers[2].forward(&h2);
        (logits, SadCache { x, h1, h2 })
    }

    /// Class posteriors `[non-speech, speech]` for each row.
    pub fn posteriors(&self, stacked: &FeatureMatrix) -> Result<Vec<(f64, f64)>> {
        if stacked.dim() != SAD_INPUT_DIM {
            return Err(Error::DimensionMismatch {
                expected: SAD_INPUT_DIM,
                got: stacked.dim(),
            });
        }
        let n = stacked.n_frames();
        let x = Tensor::from_vec([n, SAD_INPUT_DIM, 1, 1], stacked.values().iter().map(|&v| T::lit(v)).collect());
        let (logits, _) = self.forward_cached(x);
        Ok(logits
            .data
            .chunks_exact(2)
            .map(|l| {
                let (a, b) = softmax2(l[0], l[1]);
                (a.as_f64(), b.as_f64())
            })
            .collect())
    }

    pub fn cast<U: Real>(&self) -> SadModel<U> {
        let conv = |l: &Linear<T>| Linear {
            weight: cast_param(&l.weight),
            bias: cast_param(&l.bias),
            in_dim: l.in_dim,
            out_dim: l.out_dim,
        };
        SadModel {
            layers: [conv(&self.layers[0]), conv(&self.layers[1]), conv(&self.layers[2])],
        }
    }
}

fn cast_param<T: Real, U: Real>(p: &Param<T>) -> Param<U> {
    Param {
        name: p.name.clone(),
        shape: p.shape.clone(),
        value: p.value.iter().map(|v| U::lit(v.as_f64())).collect(),
        trainable: p.trainable,
        id: p.id,
    }
}

/// Speech posterior per frame.
pub fn sad_forward<T: Real>(model: &SadModel<T>, stacked: &FeatureMatrix) -> Result<ScoreSeries> {
    let post = model.posteriors(stacked)?;
    ScoreSeries::new(post.into_iter().map(|(_, s)| s).collect(), 1, "sad")
}

/// Centered moving average over `window_frames`.
pub fn smooth_scores(scores: &ScoreSeries, window_frames: usize) -> Result<ScoreSeries> {
    if scores.is_empty() {
        return Err(Error::EmptySeries);
    }
    ScoreSeries::new(moving_average(&scores.values, window_frames), scores.shift_frames, scores.origin.clone())
}

/// Sorted, non-overlapping half-open intervals in seconds.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SegmentList {
    segments: Vec<(f64, f64)>,
}

impl SegmentList {
    pub fn new(segments: Vec<(f64, f64)>) -> Result<Self> {
        for w in segments.windows(2) {
            if w[1].0 < w[0].1 {
                return Err(Error::InvalidConfig(format!("segments overlap or are unsorted: {w:?}")));
            }
        }
        if let Some(s) = segments.iter().find(|s| !(s.0 < s.1) || !s.0.is_finite() || !s.1.is_finite()) {
            return Err(Error::InvalidConfig(format!("empty or invalid segment {s:?}")));
        }
        Ok(Self { segments })
    }

    pub fn segments(&self) -> &[(f64, f64)] {
        &self.segments
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn total_duration(&self) -> f64 {
        self.segments.iter().map(|s| s.1 - s.0).sum()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut segs = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.split('\t').collect();
            let num = |s: &str| {
                s.trim().parse::<f64>().map_err(|e| Error::Parse {
                    line: i + 1,
                    msg: format!("bad time `{s}`: {e}"),
                })
            };
            if parts.len() != 2 {
                return Err(Error::Parse {
                    line: i + 1,
                    msg: "expected `<start_s>\\t<end_s>`".into(),
                });
            }
            segs.push((num(parts[0])?, num(parts[1])?));
        }
        Self::new(segs)
    }
}

impl fmt::Display for SegmentList {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (a, b) in &self.segments {
            writeln!(f, "{a:?}\t{b:?}")?;
        }
        Ok(())
    }
}

/// Runs of frames scoring above `threshold` become `[a * shift, (b + 1) * shift)`,
/// padded by `pad_s` on both sides, clamped to `[0, duration_s]` and merged.
pub fn scores_to_segments(scores: &ScoreSeries, threshold: f64, pad_s: f64, duration_s: f64) -> Result<SegmentList> {
    if scores.is_empty() {
        return Err(Error::EmptySeries);
    }
    let shift = scores.shift_frames as f64 * FRAME_SHIFT_S;
    let mut runs = Vec::new();
    let mut start = None;
    for (t, &v) in scores.values.iter().enumerate() {
        match (v > threshold, start) {
            (true, None) => start = Some(t),
            (false, Some(a)) => {
                runs.push((a, t - 1));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(a) = start {
        runs.push((a, scores.len() - 1));
    }
    let mut merged: Vec<(f64, f64)> = Vec::new();
    for (a, b) in runs {
        let s = (a as f64 * shift - pad_s).max(0.0);
        let e = ((b + 1) as f64 * shift + pad_s).min(duration_s);
        match merged.last_mut() {
            Some(last) if s <= last.1 => last.1 = last.1.max(e),
            _ => merged.push((s, e)),
        }
    }
    merged.retain(|s| s.0 < s.1);
    SegmentList::new(merged)
}

/// Keeps the frames whose timestamps fall inside a segment.
pub fn apply_mask(features: &FeatureMatrix, segments: &SegmentList) -> Result<FeatureMatrix> {
    let keep: Vec<usize> = (0..features.n_frames())
        .filter(|&k| {
            let t = features.timestamp(k);
            segments.segments.iter().any(|&(s, e)| t >= s - TIME_EPS && t < e - TIME_EPS)
        })
        .collect();
    if keep.is_empty() {
        return Err(Error::EmptyResult);
    }
    Ok(features.select_frames(&keep))
}

/// Full detector: input features, posteriors, smoothing and segments.
pub fn detect_speech<T: Real>(model: &SadModel<T>, audio: &AudioBuffer, cfg: &SadConfig) -> Result<SegmentList> {
    let stacked = sad_input(audio, cfg)?;
    let post = sad_forward(model, &stacked)?;
    let smooth = smooth_scores(&post, (cfg.smooth_s / FRAME_SHIFT_S).round() as usize)?;
    let duration = stacked.n_frames() as f64 * FRAME_SHIFT_S;
    scores_to_segments(&smooth, cfg.threshold, cfg.pad_s, duration)
}

/// Frame labels from energy: speech where the frame energy is within
/// `range_db` of the loudest frame. Digital silence is never speech.
pub fn energy_labels(audio: &AudioBuffer, range_db: f64) -> Result<Vec<u8>> {
    let frames = frame_signal(audio, FRAME_LEN_S, FRAME_SHIFT_S)?;
    let energy: Vec<f64> = (0..frames.n_frames)
        .map(|k| frames.frame(k).iter().map(|v| v * v).sum::<f64>())
        .collect();
    let peak = energy.iter().cloned().fold(0.0, f64::max);
    if peak == 0.0 {
        return Ok(vec![0; energy.len()]);
    }
    let floor = peak * 10f64.powf(-range_db / 10.0);
    Ok(energy.iter().map(|&e| u8::from(e > 0.0 && e >= floor)).collect())
}

/// Stacked SAD inputs with per-frame labels (1 = speech).
#[derive(Debug, Clone)]
pub struct SadExample {
    pub stacked: FeatureMatrix,
    pub labels: Vec<u8>,
}

impl SadExample {
    /// Stacked network input of `audio` with energy-derived frame labels.
    pub fn from_audio(audio: &AudioBuffer, cfg: &SadConfig, range_db: f64) -> Result<Self> {
        let stacked = sad_input(audio, cfg)?;
        let labels = energy_labels(audio, range_db)?;
        if labels.len() != stacked.n_frames() {
            return Err(Error::DimensionMismatch {
                expected: stacked.n_frames(),
                got: labels.len(),
            });
        }
        Ok(Self { stacked, labels })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SadTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Frames within this many dB of the loudest frame are labelled speech.
    pub label_range_db: f64,
}

impl Default for SadTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 5,
            batch_size: 256,
            lr: 1e-3,
            label_range_db: 40.0,
        }
    }
}

/// Frame-level accuracy at the 0.5 posterior threshold.
pub fn frame_accuracy<T: Real>(model: &SadModel<T>, examples: &[SadExample]) -> Result<f64> {
    let (mut right, mut total) = (0usize, 0usize);
    for ex in examples {
        let post = model.posteriors(&ex.stacked)?;
        for (p, &l) in post.iter().zip(&ex.labels) {
            right += usize::from(u8::from(p.1 > 0.5) == l);
            total += 1;
        }
    }
    if total == 0 {
        return Err(Error::InsufficientData("no labelled frames".into()));
    }
    Ok(right as f64 / total as f64)
}

/// Cross-entropy training with Adam over shuffled frames. Returns the model
/// and the mean training loss of every epoch.
pub fn train_sad(examples: &[SadExample], cfg: &SadTrainConfig, seed: u64) -> Result<(SadModel<f32>, Vec<f64>)> {
    let mut frames: Vec<(usize, usize)> = Vec::new();
    for (i, ex) in examples.iter().enumerate() {
        if ex.stacked.n_frames() != ex.labels.len() {
            return Err(Error::DimensionMismatch {
                expected: ex.stacked.n_frames(),
                got: ex.labels.len(),
            });
        }
        if ex.stacked.dim() != SAD_INPUT_DIM {
            return Err(Error::DimensionMismatch {
                expected: SAD_INPUT_DIM,
                got: ex.stacked.dim(),
            });
        }
        frames.extend((0..ex.labels.len()).map(|t| (i, t)));
    }
    let classes = frames.iter().map(|&(i, t)| examples[i].labels[t]).fold([false; 2], |mut acc, l| {
        acc[usize::from(l.min(1))] = true;
        acc
    });
    if frames.is_empty() || !(classes[0] && classes[1]) {
        return Err(Error::InsufficientData("SAD training needs speech and non-speech frames".into()));
    }
    let mut model = SadModel::<f32>::build(seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
    let mut adam = AdamState::new(
        &model,
        AdamConfig {
            lr: cfg.lr,
            weight_decay: 0.0,
            ..Default::default()
        },
    );
    let mut losses = Vec::with_capacity(cfg.epochs);
    let bs = cfg.batch_size.max(1);
    for _ in 0..cfg.epochs {
        frames.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in frames.chunks(bs) {
            let n = batch.len();
            let mut data = Vec::with_capacity(n * SAD_INPUT_DIM);
            for &(i, t) in batch {
                data.extend(examples[i].stacked.row(t).iter().map(|&v| v as f32));
            }
            let (logits, cache) = model.forward_cached(Tensor::from_vec([n, SAD_INPUT_DIM, 1, 1], data));
            let mut dlogits = Tensor::<f32>::zeros(logits.shape);
            for (k, &(i, t)) in batch.iter().enumerate() {
                let (p0, p1) = softmax2(logits.data[2 * k], logits.data[2 * k + 1]);
                let y = examples[i].labels[t].min(1) as usize;
                let py = if y == 1 { p1 } else { p0 };
                total -= (py as f64).max(1e-30).ln();
                let scale = 1.0 / n as f32;
                dlogits.data[2 * k] = (p0 - if y == 0 { 1.0 } else { 0.0 }) * scale;
                dlogits.data[2 * k + 1] = (p1 - if y == 1 { 1.0 } else { 0.0 }) * scale;
            }
            let mut grads = Grads::zeros_like(&model);
            let dh2 = model.layers[2].backward(&cache.h2, &dlogits, &mut grads);
            let dh2 = relu_backward(&cache.h2, &dh2);
            let dh1 = model.layers[1].backward(&cache.h1, &dh2, &mut grads);
            let dh1 = relu_backward(&cache.h1, &dh1);
            model.layers[0].backward(&cache.x, &dh1, &mut grads);
            adam.step(&mut model, &grads)?;
        }
        let mean = total / frames.len() as f64;
        if !mean.is_finite() {
            return Err(Error::Numeric("SAD training loss diverged".into()));
        }
        log::info!("SAD epoch loss {mean:.5}");
        losses.push(mean);
    }
    Ok((model, losses))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn series(v: Vec<f64>) -> ScoreSeries {
        ScoreSeries::new(v, 1, "t").unwrap()
    }

    fn mfcc_like(n: usize) -> FeatureMatrix {
        FeatureMatrix::new((0..n * 20).map(|i| i as f64).collect(), n, 20, FeatureKind::Mfcc).unwrap()
    }

    #[test]
    fn context_stacking() {
        let one = mfcc_like(1);
        let s = stack_context(&one, 31).unwrap();
        assert_eq!(s.dim(), 620);
        for k in 0..31 {
            assert_eq!(&s.row(0)[k * 20..(k + 1) * 20], one.row(0));
        }
        let m = mfcc_like(40);
        let s = stack_context(&m, 31).unwrap();
        assert_eq!(&s.row(20)[300..320], m.row(20));
        assert_eq!(&s.row(20)[0..20], m.row(5));
        assert_eq!(&s.row(2)[0..20], m.row(0));
        assert_eq!(&s.row(39)[600..620], m.row(39));
    }

    #[test]
    fn zero_network_is_undecided() {
        let mut model = SadModel::<f64>::build(0);
        model.visit_mut(&mut |p| p.value.fill(0.0));
        let x = stack_context(&mfcc_like(3), 31).unwrap();
        let post = model.posteriors(&x).unwrap();
        assert!(post.iter().all(|&(a, b)| a == 0.5 && b == 0.5));
    }

    #[test]
    fn forward_by_hand() {
        let mut model = SadModel::<f64>::build(1);
        model.visit_mut(&mut |p| p.value.fill(0.0));
        // fc1: unit 0 = x[0] - x[1], unit 1 = x[2] + 0.5
        model.layers[0].weight.value[0] = 1.0;
        model.layers[0].weight.value[1] = -1.0;
        model.layers[0].weight.value[620 + 2] = 1.0;
        model.layers[0].bias.value[1] = 0.5;
        // fc2: unit 0 = 2 h0 - h1
        model.layers[1].weight.value[0] = 2.0;
        model.layers[1].weight.value[1] = -1.0;
        model.layers[1].bias.value[0] = 0.25;
        // fc3: logits (0, h2_0)
        model.layers[2].weight.value[100] = 1.0;
        let mut rows = vec![0.0; 1240];
        rows[..3].copy_from_slice(&[3.0, 1.0, 0.5]);
        rows[620..623].copy_from_slice(&[1.0, 2.0, -2.0]);
        let x = FeatureMatrix::new(rows, 2, 620, FeatureKind::Generic).unwrap();
        let post = model.posteriors(&x).unwrap();
        // frame 0: h1 = (2, 1), h2_0 = relu(4 - 1 + 0.25) = 3.25
        // frame 1: h1 = (0, 0), h2_0 = 0.25
        for (k, z) in [(0, 3.25f64), (1, 0.25)] {
            let p = 1.0 / (1.0 + (-z).exp());
            assert!((post[k].1 - p).abs() < 1e-9);
            assert!((post[k].0 + post[k].1 - 1.0).abs() < 1e-9);
        }
        assert!(matches!(model.posteriors(&mfcc_like(2)), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn smoothing() {
        let c = smooth_scores(&series(vec![0.7; 20]), 50).unwrap();
        assert!(c.values.iter().all(|&v| (v - 0.7).abs() < 1e-15));
        let mut x = vec![0.0; 15];
        x[7] = 1.0;
        let s = smooth_scores(&series(x), 5).unwrap();
        let hit: Vec<usize> = (0..15).filter(|&t| s.values[t] > 0.0).collect();
        assert_eq!(hit, vec![5, 6, 7, 8, 9]);
        assert!(hit.iter().all(|&t| (s.values[t] - 0.2).abs() < 1e-15));
    }

    #[test]
    fn segment_examples() {
        let all = scores_to_segments(&series(vec![0.9; 100]), 0.5, 1.0 / 3.0, 1.0).unwrap();
        assert_eq!(all.segments(), &[(0.0, 1.0)]);
        let none = scores_to_segments(&series(vec![0.1; 100]), 0.5, 1.0 / 3.0, 1.0).unwrap();
        assert!(none.is_empty());

        let mut v = vec![0.0; 100];
        v[10..20].fill(1.0);
        v[30..40].fill(1.0);
        let segs = scores_to_segments(&series(v), 0.5, 1.0 / 3.0, 1.0).unwrap();
        assert_eq!(segs.segments().len(), 1);
        let (s, e) = segs.segments()[0];
        assert_eq!(s, 0.0);
        assert!((e - (0.4 + 1.0 / 3.0)).abs() < 1e-12);
    }

    #[test]
    fn masking() {
        let m = FeatureMatrix::new((0..100 * 20).map(|i| i as f64).collect(), 100, 20, FeatureKind::Mfcc).unwrap();
        let everything = SegmentList::new(vec![(0.0, 1.0)]).unwrap();
        assert_eq!(apply_mask(&m, &everything).unwrap(), m);
        assert!(matches!(apply_mask(&m, &SegmentList::default()), Err(Error::EmptyResult)));
        let seg = SegmentList::new(vec![(0.10, 0.20)]).unwrap();
        let out = apply_mask(&m, &seg).unwrap();
        assert_eq!(out.n_frames(), 10);
        assert_eq!(out.row(0), m.row(10));
        assert_eq!(out.row(9), m.row(19));
    }

    #[test]
    fn segment_text_round_trip() {
        let s = SegmentList::new(vec![(0.0, 0.5), (1.25, 2.0 / 3.0 + 2.0)]).unwrap();
        assert_eq!(SegmentList::parse(&s.to_string()).unwrap(), s);
        assert!(SegmentList::new(vec![(1.0, 2.0), (1.5, 3.0)]).is_err());
    }

    #[test]
    fn energy_gating() {
        let mut x = vec![0.0f32; 16000];
        for (i, v) in x.iter_mut().enumerate().skip(8000) {
            *v = 0.3 * (i as f32 * 0.2).sin();
        }
        let labels = energy_labels(&AudioBuffer::new(x, 16000).unwrap(), 30.0).unwrap();
        assert_eq!(labels.len(), 98);
        // frame k covers samples 160k .. 160k + 400
        assert!(labels[..48].iter().all(|&l| l == 0));
        assert!(labels[48..].iter().all(|&l| l == 1));
    }

    #[test]
    fn zero_epochs_returns_initialization() {
        let ex = SadExample {
            stacked: stack_context(&mfcc_like(4), 31).unwrap(),
            labels: vec![0, 1, 0, 1],
        };
        let cfg = SadTrainConfig { epochs: 0, ..Default::default() };
        let (m, losses) = train_sad(&[ex], &cfg, 5).unwrap();
        assert!(losses.is_empty());
        assert_eq!(m, SadModel::<f32>::build(5));
    }
}
