//! WebAssembly bindings for the demo page in `www/`.
//!
//! The functions in [`ops`] do the work and are plain Rust so they can be
//! tested natively; the exported wrappers only convert errors.

pub mod ops;

use wasm_bindgen::prelude::*;

fn js(e: String) -> JsError {
    JsError::new(&e)
}

/// Row-major `n_filters x 257` weights of a linear or mel filterbank.
#[wasm_bindgen]
pub fn filterbank_weights(scale: &str, n_filters: usize) -> Result<Vec<f64>, JsError> {
    ops::filterbank(scale, n_filters).map(|fb| fb.weights).map_err(js)
}

#[wasm_bindgen]
pub fn filterbank_centers(scale: &str, n_filters: usize) -> Result<Vec<f64>, JsError> {
    ops::filterbank(scale, n_filters).map(|fb| fb.center_freqs).map_err(js)
}

/// Zeros with one burst of `value` over `[start, start + len)`.
#[wasm_bindgen]
pub fn burst_series(n: usize, start: usize, len: usize, value: f64) -> Vec<f64> {
    ops::burst_series(n, start, len, value)
}

#[wasm_bindgen]
pub fn smooth(series: Vec<f64>, smooth_len: usize) -> Vec<f64> {
    ops::smooth(&series, smooth_len)
}

/// `[average, interleaved-aware]` pooled scores.
#[wasm_bindgen]
pub fn pool(series: Vec<f64>, smooth_len: usize, top_frac: f64) -> Result<Vec<f64>, JsError> {
    ops::pool(series, smooth_len, top_frac).map(|(a, b)| vec![a, b]).map_err(js)
}

/// Per-sample one-class loss at `n_points` cosine scores spread over [-1, 1].
#[wasm_bindgen]
pub fn oc_softmax_curve(label: u8, alpha: f64, m0: f64, m1: f64, n_points: usize) -> Result<Vec<f64>, JsError> {
    ops::oc_softmax_curve(label, alpha, m0, m1, n_points).map_err(js)
}
