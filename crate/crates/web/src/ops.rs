use spoofdet::audio::SAMPLE_RATE;
use spoofdet::features::{FilterBank, N_FFT};
use spoofdet::nnet::loss::oc_softmax_sample;
use spoofdet::nnet::OcSoftmaxConfig;
use spoofdet::scoring::{interleaved_aware, moving_average, score_average, PoolingConfig, ScoreSeries};

pub fn filterbank(scale: &str, n_filters: usize) -> Result<FilterBank, String> {
    let fb = match scale {
        "linear" => FilterBank::linear(n_filters, N_FFT, SAMPLE_RATE),
        "mel" => FilterBank::mel(n_filters, N_FFT, SAMPLE_RATE),
        other => return Err(format!("unknown scale `{other}` (linear or mel)")),
    };
    fb.map_err(|e| e.to_string())
}

pub fn burst_series(n: usize, start: usize, len: usize, value: f64) -> Vec<f64> {
    let mut v = vec![0.0; n];
    let end = start.saturating_add(len).min(n);
    if start < end {
        v[start..end].fill(value);
    }
    v
}

pub fn smooth(series: &[f64], smooth_len: usize) -> Vec<f64> {
    moving_average(series, smooth_len.max(1))
}

pub fn pool(series: Vec<f64>, smooth_len: usize, top_frac: f64) -> Result<(f64, f64), String> {
    let cfg = PoolingConfig {
        smooth_len,
        top_frac,
        ..Default::default()
    };
    cfg.validate().map_err(|e| e.to_string())?;
    let s = ScoreSeries::new(series, 1, "demo").map_err(|e| e.to_string())?;
    let avg = score_average(&s).map_err(|e| e.to_string())?;
    let il = interleaved_aware(&s, &cfg).map_err(|e| e.to_string())?;
    Ok((avg, il))
}

pub fn oc_softmax_curve(label: u8, alpha: f64, m0: f64, m1: f64, n_points: usize) -> Result<Vec<f64>, String> {
    let cfg = OcSoftmaxConfig { alpha, m0, m1 };
    cfg.validate().map_err(|e| e.to_string())?;
    if label > 1 {
        return Err(format!("label {label} is not 0 or 1"));
    }
    let n = n_points.max(2);
    Ok((0..n)
        .map(|i| {
            let s = -1.0 + 2.0 * i as f64 / (n - 1) as f64;
            oc_softmax_sample(s, label, &cfg)
        })
        .collect())
}
