//! Acoustic front end: framing, power spectra, linear (LFB) and mel
//! filterbanks, MFCC and sliding mean/variance normalization.

use std::f64::consts::PI;

use rustfft::{num_complex::Complex, FftPlanner};

use crate::audio::AudioBuffer;
use crate::error::{Error, Result};

pub const FRAME_LEN_S: f64 = 0.025;
pub const FRAME_SHIFT_S: f64 = 0.010;
pub const N_FFT: usize = 512;
pub const LFB_DIM: usize = 70;
pub const MFCC_DIM: usize = 20;
pub const MFCC_MEL_FILTERS: usize = 30;
/// Floor applied to filterbank energies before the log.
pub const LOG_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureKind {
    Lfb,
    Mfcc,
    /// Anything else stored in the same container (score series, embeddings).
    Generic,
}

impl FeatureKind {
    pub fn code(self) -> u32 {
        match self {
            FeatureKind::Lfb => 1,
            FeatureKind::Mfcc => 2,
            FeatureKind::Generic => 3,
        }
    }

    pub fn from_code(code: u32) -> Option<Self> {
        match code {
            1 => Some(FeatureKind::Lfb),
            2 => Some(FeatureKind::Mfcc),
            3 => Some(FeatureKind::Generic),
            _ => None,
        }
    }
}

/// Row-major `n_frames x dim` matrix at 100 frames per second.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    values: Vec<f64>,
    n_frames: usize,
    dim: usize,
    kind: FeatureKind,
}

impl FeatureMatrix {
    pub fn new(values: Vec<f64>, n_frames: usize, dim: usize, kind: FeatureKind) -> Result<Self> {
        if values.len() != n_frames * dim {
            return Err(Error::DimensionMismatch {
                expected: n_frames * dim,
                got: values.len(),
            });
        }
        let want = match kind {
            FeatureKind::Lfb => Some(LFB_DIM),
            FeatureKind::Mfcc => Some(MFCC_DIM),
            FeatureKind::Generic => None,
        };
        if let Some(want) = want {
            if dim != want {
                return Err(Error::DimensionMismatch {
                    expected: want,
                    got: dim,
                });
            }
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite feature value".into()));
        }
        Ok(Self {
            values,
            n_frames,
            dim,
            kind,
        })
    }

    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn kind(&self) -> FeatureKind {
        self.kind
    }

    pub fn frame_shift_s(&self) -> f64 {
        FRAME_SHIFT_S
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.values[t * self.dim..(t + 1) * self.dim]
    }

    pub fn get(&self, t: usize, d: usize) -> f64 {
        self.values[t * self.dim + d]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.dim.max(1))
    }

    /// Timestamp (seconds) of frame `t`.
    pub fn timestamp(&self, t: usize) -> f64 {
        t as f64 * FRAME_SHIFT_S
    }

    pub fn duration_s(&self) -> f64 {
        self.n_frames as f64 * FRAME_SHIFT_S
    }

    /// Copies the given frames, in the given order.
    pub fn select_frames(&self, frames: &[usize]) -> Self {
        let mut values = Vec::with_capacity(frames.len() * self.dim);
        for &t in frames {
            values.extend_from_slice(self.row(t));
        }
        Self {
            values,
            n_frames: frames.len(),
            dim: self.dim,
            kind: self.kind,
        }
    }

    pub fn mean(&self) -> f64 {
        if self.values.is_empty() {
            0.0
        } else {
            self.values.iter().sum::<f64>() / self.values.len() as f64
        }
    }

    pub(crate) fn with_values(&self, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), self.values.len());
        Self {
            values,
            ..self.clone()
        }
    }
}

/// Windowed frames, row-major `n_frames x frame_len`.
#[derive(Debug, Clone, PartialEq)]
pub struct Frames {
    pub data: Vec<f64>,
    pub n_frames: usize,
    pub frame_len: usize,
}

impl Frames {
    pub fn frame(&self, k: usize) -> &[f64] {
        &self.data[k * self.frame_len..(k + 1) * self.frame_len]
    }
}

pub fn hamming(len: usize) -> Vec<f64> {
    if len == 1 {
        return vec![1.0];
    }
    (0..len)
        .map(|n| 0.54 - 0.46 * (2.0 * PI * n as f64 / (len - 1) as f64).cos())
        .collect()
}

/// Number of frames `1 + floor((n - len) / hop)` for `n >= len`.
pub fn frame_count(n_samples: usize, frame_len: usize, hop: usize) -> Option<usize> {
    (n_samples >= frame_len).then(|| 1 + (n_samples - frame_len) / hop)
}

/// Cuts the signal into Hamming-windowed frames.
pub fn frame_signal(audio: &AudioBuffer, frame_len_s: f64, hop_s: f64) -> Result<Frames> {
    let sr = audio.sample_rate() as f64;
    let frame_len = (frame_len_s * sr).round() as usize;
    let hop = (hop_s * sr).round() as usize;
    if frame_len == 0 || hop == 0 {
        return Err(Error::InvalidConfig("frame length and hop must be positive".into()));
    }
    let samples = audio.samples();
    let n_frames = frame_count(samples.len(), frame_len, hop).ok_or(Error::TooShort {
        needed: frame_len,
        got: samples.len(),
    })?;
    let window = hamming(frame_len);
    let mut data = Vec::with_capacity(n_frames * frame_len);
    for k in 0..n_frames {
        let start = k * hop;
        data.extend(
            samples[start..start + frame_len]
                .iter()
                .zip(&window)
                .map(|(&s, &w)| s as f64 * w),
        );
    }
    Ok(Frames {
        data,
        n_frames,
        frame_len,
    })
}

/// `|FFT|^2` of each frame zero-padded to `n_fft`; row-major `n_frames x (n_fft/2 + 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerSpectrum {
    pub data: Vec<f64>,
    pub n_frames: usize,
    pub n_bins: usize,
}

impl PowerSpectrum {
    pub fn row(&self, k: usize) -> &[f64] {
        &self.data[k * self.n_bins..(k + 1) * self.n_bins]
    }
}

pub fn power_spectrum(frames: &Frames, n_fft: usize) -> Result<PowerSpectrum> {
    if frames.frame_len > n_fft {
        return Err(Error::DimensionMismatch {
            expected: n_fft,
            got: frames.frame_len,
        });
    }
    let n_bins = n_fft / 2 + 1;
    let fft = FftPlanner::<f64>::new().plan_fft_forward(n_fft);
    let mut buf = vec![Complex::new(0.0, 0.0); n_fft];
    let mut scratch = vec![Complex::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    let mut data = Vec::with_capacity(frames.n_frames * n_bins);
    for k in 0..frames.n_frames {
        for (slot, &x) in buf.iter_mut().zip(frames.frame(k)) {
            *slot = Complex::new(x, 0.0);
        }
        buf[frames.frame_len..].fill(Complex::new(0.0, 0.0));
        fft.process_with_scratch(&mut buf, &mut scratch);
        data.extend(buf[..n_bins].iter().map(|c| c.norm_sqr()));
    }
    Ok(PowerSpectrum {
        data,
        n_frames: frames.n_frames,
        n_bins,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FilterScale {
    Linear,
    Mel,
}

/// Triangular filters; each weight is the triangle's mean over the bin's
/// frequency interval, so filters of equal width have equal total weight.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterBank {
    /// `n_filters x n_bins`, row-major.
    pub weights: Vec<f64>,
    pub center_freqs: Vec<f64>,
    pub n_filters: usize,
    pub n_bins: usize,
    pub scale: FilterScale,
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Antiderivative of the unit-peak triangle on `[lo, hi]` peaking at `peak`.
fn triangle_integral(x: f64, lo: f64, peak: f64, hi: f64) -> f64 {
    if x <= lo {
        0.0
    } else if x <= peak {
        (x - lo) * (x - lo) / (2.0 * (peak - lo))
    } else if x < hi {
        (hi - lo) / 2.0 - (hi - x) * (hi - x) / (2.0 * (hi - peak))
    } else {
        (hi - lo) / 2.0
    }
}

impl FilterBank {
    fn from_edges(edges: &[f64], n_fft: usize, sample_rate: u32, scale: FilterScale) -> Self {
        let n_filters = edges.len() - 2;
        let n_bins = n_fft / 2 + 1;
        let df = sample_rate as f64 / n_fft as f64;
        let mut weights = vec![0.0; n_filters * n_bins];
        for i in 0..n_filters {
            let (lo, peak, hi) = (edges[i], edges[i + 1], edges[i + 2]);
            for k in 0..n_bins {
                let a = (k as f64 - 0.5) * df;
                let b = (k as f64 + 0.5) * df;
                let area = triangle_integral(b, lo, peak, hi) - triangle_integral(a, lo, peak, hi);
                weights[i * n_bins + k] = area / df;
            }
        }
        Self {
            weights,
            center_freqs: edges[1..=n_filters].to_vec(),
            n_filters,
            n_bins,
            scale,
        }
    }

    /// `n_filters + 2` equally spaced edges from 0 Hz to Nyquist.
    pub fn linear(n_filters: usize, n_fft: usize, sample_rate: u32) -> Result<Self> {
        if n_filters == 0 {
            return Err(Error::InvalidConfig("n_filters must be at least 1".into()));
        }
        let nyquist = sample_rate as f64 / 2.0;
        let edges: Vec<f64> = (0..n_filters + 2)
            .map(|j| nyquist * j as f64 / (n_filters + 1) as f64)
            .collect();
        Ok(Self::from_edges(&edges, n_fft, sample_rate, FilterScale::Linear))
    }

    /// Edges equally spaced on the HTK mel scale from 0 Hz to Nyquist.
    pub fn mel(n_filters: usize, n_fft: usize, sample_rate: u32) -> Result<Self> {
        if n_filters == 0 {
            return Err(Error::InvalidConfig("n_filters must be at least 1".into()));
        }
        let top = hz_to_mel(sample_rate as f64 / 2.0);
        let edges: Vec<f64> = (0..n_filters + 2)
            .map(|j| mel_to_hz(top * j as f64 / (n_filters + 1) as f64))
            .collect();
        Ok(Self::from_edges(&edges, n_fft, sample_rate, FilterScale::Mel))
    }

    pub fn filter(&self, i: usize) -> &[f64] {
        &self.weights[i * self.n_bins..(i + 1) * self.n_bins]
    }
}

/// `log(max(fb . power, LOG_FLOOR))` for every frame.
pub fn apply_filterbank_log(spectrum: &PowerSpectrum, fb: &FilterBank) -> Result<FeatureMatrix> {
    if spectrum.n_bins != fb.n_bins {
        return Err(Error::DimensionMismatch {
            expected: fb.n_bins,
            got: spectrum.n_bins,
        });
    }
    let mut values = Vec::with_capacity(spectrum.n_frames * fb.n_filters);
    for k in 0..spectrum.n_frames {
        let row = spectrum.row(k);
        for i in 0..fb.n_filters {
            let e: f64 = fb.filter(i).iter().zip(row).map(|(w, p)| w * p).sum();
            values.push(e.max(LOG_FLOOR).ln());
        }
    }
    let kind = match (fb.scale, fb.n_filters) {
        (FilterScale::Linear, LFB_DIM) => FeatureKind::Lfb,
        _ => FeatureKind::Generic,
    };
    FeatureMatrix::new(values, spectrum.n_frames, fb.n_filters, kind)
}

/// Front end shared by LFB and MFCC: 25 ms Hamming frames every 10 ms, 512-point FFT.
pub fn audio_power_spectrum(audio: &AudioBuffer) -> Result<PowerSpectrum> {
    let frames = frame_signal(audio, FRAME_LEN_S, FRAME_SHIFT_S)?;
    power_spectrum(&frames, N_FFT)
}

/// 70-dimensional log linear filterbank energies.
pub fn lfb(audio: &AudioBuffer) -> Result<FeatureMatrix> {
    let fb = FilterBank::linear(LFB_DIM, N_FFT, audio.sample_rate())?;
    apply_filterbank_log(&audio_power_spectrum(audio)?, &fb)
}

/// LFB or MFCC features of an utterance.
pub fn extract_features(audio: &AudioBuffer, kind: FeatureKind) -> Result<FeatureMatrix> {
    match kind {
        FeatureKind::Lfb => lfb(audio),
        FeatureKind::Mfcc => mfcc(audio),
        FeatureKind::Generic => Err(Error::InvalidConfig("generic matrices are not extracted from audio".into())),
    }
}

/// Orthonormal DCT-II.
pub fn dct_ii(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    let nf = n as f64;
    (0..n)
        .map(|k| {
            let s: f64 = x
                .iter()
                .enumerate()
                .map(|(i, &v)| v * (PI * k as f64 * (2.0 * i as f64 + 1.0) / (2.0 * nf)).cos())
                .sum();
            let scale = if k == 0 { (1.0 / nf).sqrt() } else { (2.0 / nf).sqrt() };
            s * scale
        })
        .collect()
}

/// Keeps cepstra `0..n_ceps` of the DCT of each log-mel row.
pub fn cepstra(log_mel: &FeatureMatrix, n_ceps: usize) -> Result<FeatureMatrix> {
    if n_ceps > log_mel.dim() {
        return Err(Error::DimensionMismatch {
            expected: log_mel.dim(),
            got: n_ceps,
        });
    }
    let mut values = Vec::with_capacity(log_mel.n_frames() * n_ceps);
    for row in log_mel.rows() {
        values.extend_from_slice(&dct_ii(row)[..n_ceps]);
    }
    let kind = if n_ceps == MFCC_DIM {
        FeatureKind::Mfcc
    } else {
        FeatureKind::Generic
    };
    FeatureMatrix::new(values, log_mel.n_frames(), n_ceps, kind)
}

/// 20 cepstra from 30 mel filters.
pub fn mfcc(audio: &AudioBuffer) -> Result<FeatureMatrix> {
    let fb = FilterBank::mel(MFCC_MEL_FILTERS, N_FFT, audio.sample_rate())?;
    let log_mel = apply_filterbank_log(&audio_power_spectrum(audio)?, &fb)?;
    cepstra(&log_mel, MFCC_DIM)
}

/// Per-dimension normalization over a centered window of `window_frames`
/// frames (`window_frames / 2` on each side, clipped at the edges).
pub fn mvn_sliding(features: &FeatureMatrix, window_frames: usize) -> Result<FeatureMatrix> {
    let t_len = features.n_frames();
    if t_len == 0 {
        return Err(Error::EmptyFeatures);
    }
    let dim = features.dim();
    let half = window_frames / 2;
    let mut out = vec![0.0; t_len * dim];
    for t in 0..t_len {
        let lo = t.saturating_sub(half);
        let hi = (t + half).min(t_len - 1);
        let n = (hi - lo + 1) as f64;
        for d in 0..dim {
            let mean = (lo..=hi).map(|s| features.get(s, d)).sum::<f64>() / n;
            let var = (lo..=hi)
                .map(|s| {
                    let c = features.get(s, d) - mean;
                    c * c
                })
                .sum::<f64>()
                / n;
            out[t * dim + d] = (features.get(t, d) - mean) / var.sqrt().max(1e-8);
        }
    }
    Ok(features.with_values(out))
}

/// Window length in frames for a duration at 100 frames per second.
pub fn frames_for(seconds: f64) -> usize {
    (seconds / FRAME_SHIFT_S).round() as usize
}
