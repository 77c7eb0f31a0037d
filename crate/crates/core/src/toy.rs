//! Synthetic two-class corpus for end-to-end checks.
//!
//! "Pristine" utterances are harmonic tone complexes with a per-source pitch
//! range and resonance, syllable-rate amplitude modulation and background
//! noise. "Spoof" utterances render the same kind of voice and add a
//! generator-specific narrow noise band above the harmonics. Every
//! utterance draws its own pitch, tilt and noise level.

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::audio::{write_wav, AudioBuffer, DatasetManifest, Label, ManifestEntry, Partition, SAMPLE_RATE};
use crate::backend::{Backend, BackendConfig, UtteranceEmbeddings};
use crate::error::Result;
use crate::features::lfb;
use crate::nnet::{extract_embeddings, train, Example, TrainConfig, TrainingLog, WindowConfig, XResNet, XResNetConfig};
use crate::pipeline::{Detector, UtteranceScore};
use crate::sad::SadConfig;
use crate::scoring::{compute_eer, EvalReport, PoolingConfig, ScoreLine};

const SR: f64 = SAMPLE_RATE as f64;
const HARMONIC_LIMIT_HZ: f64 = 4000.0;
const BLOCK: usize = 160;

/// Utterance-level voice parameters.
#[derive(Debug, Clone, Copy)]
pub struct Voice {
    pub f0: f64,
    pub tilt: f64,
    pub formant_hz: f64,
    pub syllable_hz: f64,
    /// Background noise level relative to the voice, in dB.
    pub noise_db: f64,
}

impl Voice {
    pub fn draw(source: usize, rng: &mut impl Rng) -> Self {
        let s = source as f64;
        Self {
            f0: 100.0 + 30.0 * s + rng.random_range(-12.0..12.0),
            tilt: rng.random_range(0.7..1.4),
            formant_hz: 600.0 + 250.0 * s + rng.random_range(-80.0..80.0),
            syllable_hz: rng.random_range(3.0..5.0),
            noise_db: rng.random_range(-35.0..-15.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Artifact {
    pub low_hz: f64,
    pub high_hz: f64,
    /// Band level relative to the voice, in dB.
    pub level_db: f64,
}

impl Artifact {
    pub fn for_generator(g: usize) -> Self {
        let low = 4300.0 + 650.0 * g as f64;
        Self {
            low_hz: low,
            high_hz: low + 500.0,
            level_db: -22.0,
        }
    }
}

fn rms(x: &[f64]) -> f64 {
    (x.iter().map(|v| v * v).sum::<f64>() / x.len().max(1) as f64).sqrt()
}

/// Harmonic complex with slow vibrato and syllabic modulation.
pub fn render_voice(v: &Voice, n: usize, rng: &mut impl Rng) -> Vec<f64> {
    let n_harm = (HARMONIC_LIMIT_HZ / (v.f0 * 1.05)).floor() as usize;
    let amps: Vec<f64> = (1..=n_harm)
        .map(|k| {
            let f = k as f64 * v.f0;
            let bump = (-((f - v.formant_hz) / 350.0).powi(2)).exp();
            (k as f64).powf(-v.tilt) * (1.0 + 3.0 * bump)
        })
        .collect();
    let mut phase: Vec<f64> = (0..n_harm).map(|_| rng.random_range(0.0..2.0 * PI)).collect();
    let vib_rate = rng.random_range(4.0..6.0);
    let vib_phase = rng.random_range(0.0..2.0 * PI);
    let syl_phase = rng.random_range(0.0..2.0 * PI);
    let mut out = vec![0.0; n];
    for (b, block) in out.chunks_mut(BLOCK).enumerate() {
        let t = (b * BLOCK) as f64 / SR;
        let f0 = v.f0 * (1.0 + 0.02 * (2.0 * PI * vib_rate * t + vib_phase).sin());
        for (k, (&a, ph)) in amps.iter().zip(phase.iter_mut()).enumerate() {
            let w = 2.0 * PI * f0 * (k + 1) as f64 / SR;
            let (mut c, mut s) = (ph.cos(), ph.sin());
            let (cw, sw) = (w.cos(), w.sin());
            for y in block.iter_mut() {
                *y += a * s;
                (c, s) = (c * cw - s * sw, s * cw + c * sw);
            }
            *ph = (*ph + w * block.len() as f64).rem_euclid(2.0 * PI);
        }
    }
    for (i, y) in out.iter_mut().enumerate() {
        let t = i as f64 / SR;
        *y *= 0.55 + 0.45 * (2.0 * PI * v.syllable_hz * t + syl_phase).sin();
    }
    out
}

/// White noise band-limited to `[low_hz, high_hz)` through the FFT.
pub fn band_noise(n: usize, low_hz: f64, high_hz: f64, rng: &mut impl Rng) -> Vec<f64> {
    let mut buf: Vec<Complex<f64>> = (0..n).map(|_| Complex::new(rng.sample(StandardNormal), 0.0)).collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(n).process(&mut buf);
    for (k, c) in buf.iter_mut().enumerate() {
        let f = k.min(n - k) as f64 * SR / n as f64;
        if f < low_hz || f >= high_hz {
            *c = Complex::new(0.0, 0.0);
        }
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    buf.iter().map(|c| c.re / n as f64).collect()
}

fn add_scaled(dst: &mut [f64], src: &[f64], gain: f64) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += gain * s;
    }
}

fn finish(mut x: Vec<f64>) -> Result<AudioBuffer> {
    let peak = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        x.iter_mut().for_each(|v| *v *= 0.5 / peak);
    }
    AudioBuffer::new(x.into_iter().map(|v| v as f32).collect(), SAMPLE_RATE)
}

/// What an utterance contains.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ToyKind {
    Pristine { source: usize },
    Spoof { source: usize, generator: usize },
    /// Pristine audio with a spoofed stretch `[start, start + frac)` of the
    /// duration (fractions of the length).
    Partial { source: usize, generator: usize, start: f64, frac: f64 },
}

pub fn render(kind: ToyKind, seconds: f64, seed: u64) -> Result<AudioBuffer> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = (seconds * SR).round() as usize;
    let source = match kind {
        ToyKind::Pristine { source } | ToyKind::Spoof { source, .. } | ToyKind::Partial { source, .. } => source,
    };
    let voice = Voice::draw(source, &mut rng);
    let mut x = render_voice(&voice, n, &mut rng);
    let level = rms(&x);
    let noise: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    add_scaled(&mut x, &noise, level * 10f64.powf(voice.noise_db / 20.0));
    let (generator, range) = match kind {
        ToyKind::Pristine { .. } => return finish(x),
        ToyKind::Spoof { generator, .. } => (generator, 0..n),
        ToyKind::Partial { generator, start, frac, .. } => {
            let a = ((start * n as f64) as usize).min(n);
            let b = (((start + frac) * n as f64) as usize).min(n);
            (generator, a..b)
        }
    };
    let art = Artifact::for_generator(generator);
    let band = band_noise(n, art.low_hz, art.high_hz, &mut rng);
    let gain = level * 10f64.powf(art.level_db / 20.0) / rms(&band).max(1e-12);
    add_scaled(&mut x[range.clone()], &band[range], gain);
    finish(x)
}

/// Sizes of a generated corpus.
#[derive(Debug, Clone, Copy)]
pub struct ToyCorpusSpec {
    pub sources: usize,
    pub generators: usize,
    pub train_per_class: usize,
    pub dev_per_class: usize,
    pub eval_per_label: usize,
    pub train_seconds: f64,
    pub eval_seconds: f64,
}

impl Default for ToyCorpusSpec {
    fn default() -> Self {
        Self {
            sources: 5,
            generators: 5,
            train_per_class: 20,
            dev_per_class: 4,
            eval_per_label: 25,
            train_seconds: 3.0,
            eval_seconds: 8.0,
        }
    }
}

/// One planned utterance of a corpus.
#[derive(Debug, Clone)]
pub struct ToyItem {
    pub name: String,
    pub kind: ToyKind,
    pub label: Label,
    pub class_id: String,
    pub partition: Partition,
    pub seconds: f64,
    pub seed: u64,
}

impl ToyItem {
    pub fn render(&self) -> Result<AudioBuffer> {
        render(self.kind, self.seconds, self.seed)
    }
}

/// Train and dev items for every source and generator class, then eval
/// items: pristine, fully spoofed, and pristine with a 20% spoofed insertion
/// at a random position.
pub fn plan_corpus(spec: &ToyCorpusSpec, seed: u64) -> Vec<ToyItem> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut items = Vec::new();
    let push = |items: &mut Vec<ToyItem>, name: String, kind: ToyKind, partition: Partition, seconds: f64, rng: &mut ChaCha8Rng| {
        let (label, class_id) = match kind {
            ToyKind::Pristine { source } => (Label::Pristine, format!("src{source}")),
            ToyKind::Spoof { generator, .. } | ToyKind::Partial { generator, .. } => (Label::Spoof, format!("gen{generator}")),
        };
        items.push(ToyItem {
            name,
            kind,
            label,
            class_id,
            partition,
            seconds,
            seed: rng.random(),
        });
    };
    for (partition, per_class) in [(Partition::Train, spec.train_per_class), (Partition::Dev, spec.dev_per_class)] {
        let tag = partition.as_str();
        for c in 0..spec.sources {
            for i in 0..per_class {
                let kind = ToyKind::Pristine { source: c };
                push(&mut items, format!("{tag}/src{c}_{i:03}.wav"), kind, partition, spec.train_seconds, &mut rng);
            }
        }
        for g in 0..spec.generators {
            for i in 0..per_class {
                let source = rng.random_range(0..spec.sources);
                let kind = ToyKind::Spoof { source, generator: g };
                push(&mut items, format!("{tag}/gen{g}_{i:03}.wav"), kind, partition, spec.train_seconds, &mut rng);
            }
        }
    }
    for i in 0..spec.eval_per_label {
        let source = rng.random_range(0..spec.sources);
        push(&mut items, format!("eval/pristine_{i:03}.wav"), ToyKind::Pristine { source }, Partition::Eval, spec.eval_seconds, &mut rng);
        let (source, generator) = (rng.random_range(0..spec.sources), rng.random_range(0..spec.generators));
        push(&mut items, format!("eval/spoof_{i:03}.wav"), ToyKind::Spoof { source, generator }, Partition::Eval, spec.eval_seconds, &mut rng);
        let (source, generator) = (rng.random_range(0..spec.sources), rng.random_range(0..spec.generators));
        let start = rng.random_range(0.0..0.8);
        let kind = ToyKind::Partial { source, generator, start, frac: 0.2 };
        push(&mut items, format!("eval/partial_{i:03}.wav"), kind, Partition::Eval, spec.eval_seconds, &mut rng);
    }
    items
}

/// Renders every item under `dir` and returns the matching manifest.
pub fn write_corpus(dir: &Path, items: &[ToyItem]) -> Result<DatasetManifest> {
    let mut entries = Vec::new();
    for item in items {
        let path = dir.join(&item.name);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| crate::Error::io(parent, e))?;
        }
        write_wav(&path, &item.render()?)?;
        entries.push(ManifestEntry::new(item.name.clone(), item.label, item.class_id.clone(), item.partition));
    }
    DatasetManifest::new(entries)
}

/// Everything needed to train and evaluate a detector on a toy corpus.
#[derive(Debug, Clone)]
pub struct ToyExperiment {
    pub corpus: ToyCorpusSpec,
    pub model: XResNetConfig,
    pub train: TrainConfig,
    pub window: WindowConfig,
    pub backend: BackendConfig,
    pub pooling: PoolingConfig,
    pub seed: u64,
}

impl Default for ToyExperiment {
    /// Quarter-width network and 2 s windows so a run fits in a few CPU
    /// minutes.
    fn default() -> Self {
        Self {
            corpus: ToyCorpusSpec::default(),
            model: XResNetConfig {
                width_multiplier: 0.25,
                embedding_dim: 32,
                ..Default::default()
            },
            train: TrainConfig {
                max_epochs: 8,
                patience: 3,
                batch_size: 32,
                crop_frames: 200,
                ..Default::default()
            },
            window: WindowConfig { window: 200, shift: 10 },
            backend: BackendConfig {
                lda_dim: 9,
                plda_rank: 9,
                ..Default::default()
            },
            pooling: PoolingConfig::default(),
            seed: 0,
        }
    }
}

/// EERs of both poolings on fully spoofed and partially spoofed eval sets.
#[derive(Debug, Clone)]
pub struct ToyReport {
    pub full_average: EvalReport,
    pub full_interleaved: EvalReport,
    pub partial_average: EvalReport,
    pub partial_interleaved: EvalReport,
    pub training: TrainingLog,
    pub detector: Detector,
    /// Pooled scores of every eval utterance, in corpus order.
    pub scores: Vec<ScoreLine>,
}

/// Generates the corpus, trains network and backend, and scores the eval
/// utterances. No speech mask is applied since the toy audio has no
/// silences.
pub fn run_experiment(exp: &ToyExperiment) -> Result<ToyReport> {
    let items = plan_corpus(&exp.corpus, exp.seed);
    let mut train_set = Vec::new();
    let mut dev_set = Vec::new();
    let mut class_ids = Vec::new();
    let mut eval = Vec::new();
    for item in &items {
        let feats = lfb(&item.render()?)?;
        match item.partition {
            Partition::Train => {
                class_ids.push(item.class_id.clone());
                train_set.push(Example { features: feats, label: item.label.target() });
            }
            Partition::Dev => dev_set.push(Example { features: feats, label: item.label.target() }),
            Partition::Eval => eval.push((item, feats)),
        }
    }
    let model = XResNet::build(&exp.model, exp.seed)?;
    let (network, training) = train(model, &train_set, &dev_set, &exp.train, exp.seed)?;

    let mut utts = Vec::with_capacity(train_set.len());
    for (ex, class_id) in train_set.iter().zip(class_ids) {
        let embeddings = extract_embeddings(&network, &ex.features, &exp.window)?;
        utts.push(UtteranceEmbeddings {
            embeddings: embeddings.into_iter().map(|e| e.vector).collect(),
            label: ex.label,
            class_id,
        });
    }
    let (backend, _) = Backend::train(&utts, &exp.backend, exp.seed)?;
    let detector = Detector {
        sad: None,
        sad_config: SadConfig::default(),
        network,
        window: exp.window,
        backend,
        pooling: exp.pooling,
    };

    let (mut pristine, mut full, mut partial) = (Vec::new(), Vec::new(), Vec::new());
    let mut scores = Vec::with_capacity(eval.len());
    for (item, feats) in &eval {
        let s = detector.pool(detector.window_scores(feats)?)?;
        scores.push(ScoreLine {
            path: item.name.clone(),
            avg: s.avg,
            interleaved: s.interleaved,
        });
        match item.kind {
            ToyKind::Pristine { .. } => pristine.push(s),
            ToyKind::Spoof { .. } => full.push(s),
            ToyKind::Partial { .. } => partial.push(s),
        }
    }
    let eer = |targets: &[UtteranceScore], pick: fn(&UtteranceScore) -> f64| {
        let t: Vec<f64> = targets.iter().map(pick).collect();
        let n: Vec<f64> = pristine.iter().map(pick).collect();
        compute_eer(&t, &n)
    };
    Ok(ToyReport {
        full_average: eer(&full, |s| s.avg)?,
        full_interleaved: eer(&full, |s| s.interleaved)?,
        partial_average: eer(&partial, |s| s.avg)?,
        partial_interleaved: eer(&partial, |s| s.interleaved)?,
        training,
        detector,
        scores,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rendering_is_seeded_and_bounded() {
        let k = ToyKind::Spoof { source: 1, generator: 2 };
        let a = render(k, 0.5, 4).unwrap();
        assert_eq!(a, render(k, 0.5, 4).unwrap());
        assert_ne!(a, render(k, 0.5, 5).unwrap());
        assert_eq!(a.len(), 8000);
        assert!(a.samples().iter().all(|v| v.abs() <= 0.5 + 1e-6));
    }

    #[test]
    fn artifact_band_raises_high_channels() {
        let p = lfb(&render(ToyKind::Pristine { source: 0 }, 1.0, 1).unwrap()).unwrap();
        let s = lfb(&render(ToyKind::Spoof { source: 0, generator: 0 }, 1.0, 1).unwrap()).unwrap();
        // generator 0 sits at 4.3-4.8 kHz, around channels 38-42
        let band = |m: &crate::features::FeatureMatrix| m.rows().map(|r| r[38..=41].iter().sum::<f64>()).sum::<f64>() / m.n_frames() as f64;
        assert!(band(&s) > band(&p) + 4.0, "{} vs {}", band(&s), band(&p));
    }

    #[test]
    fn corpus_plan_shape() {
        let spec = ToyCorpusSpec::default();
        let items = plan_corpus(&spec, 0);
        let count = |p: Partition| items.iter().filter(|i| i.partition == p).count();
        assert_eq!(count(Partition::Train), 200);
        assert_eq!(count(Partition::Dev), 40);
        assert_eq!(count(Partition::Eval), 75);
        let classes: std::collections::BTreeSet<&str> = items.iter().map(|i| i.class_id.as_str()).collect();
        assert_eq!(classes.len(), 10);
    }
}
