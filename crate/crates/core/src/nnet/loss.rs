//! One-class softmax loss and the cosine scoring it is built on.

use serde::{Deserialize, Serialize};

use super::real::Real;
use crate::error::{Error, Result};

/// Margins and scale of the one-class loss. Target (label 0) scores are
/// pulled above `m0`, spoof (label 1) scores pushed below `m1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OcSoftmaxConfig {
    pub alpha: f64,
    pub m0: f64,
    pub m1: f64,
}

impl Default for OcSoftmaxConfig {
    fn default() -> Self {
        Self {
            alpha: 20.0,
            m0: 0.9,
            m1: 0.2,
        }
    }
}

impl OcSoftmaxConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.m0 > self.m1) {
            return Err(Error::InvalidMargins {
                m0: self.m0,
                m1: self.m1,
            });
        }
        if !(-1.0..=1.0).contains(&self.m0) || !(-1.0..=1.0).contains(&self.m1) {
            return Err(Error::InvalidConfig("margins must lie in [-1, 1]".into()));
        }
        Ok(())
    }
}

/// `log(1 + e^z)` without overflow.
pub fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Per-sample loss `softplus(alpha (m_y - s) (-1)^y)`.
pub fn oc_softmax_sample(score: f64, label: u8, cfg: &OcSoftmaxConfig) -> f64 {
    let (margin, sign) = if label == 0 { (cfg.m0, 1.0) } else { (cfg.m1, -1.0) };
    softplus(cfg.alpha * (margin - score) * sign)
}

/// Mean one-class loss over the batch and its gradient with respect to each
/// cosine score.
pub fn oc_softmax_loss(scores: &[f64], labels: &[u8], cfg: &OcSoftmaxConfig) -> Result<(f64, Vec<f64>)> {
    cfg.validate()?;
    if scores.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: scores.len(),
            got: labels.len(),
        });
    }
    if scores.is_empty() {
        return Err(Error::InsufficientData("empty batch".into()));
    }
    if let Some(&l) = labels.iter().find(|&&l| l > 1) {
        return Err(Error::InvalidConfig(format!("label {l} is not 0 or 1")));
    }
    let n = scores.len() as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(scores.len());
    for (&s, &y) in scores.iter().zip(labels) {
        let (margin, sign) = if y == 0 { (cfg.m0, 1.0) } else { (cfg.m1, -1.0) };
        let z = cfg.alpha * (margin - s) * sign;
        loss += softplus(z);
        grad.push(-cfg.alpha * sign * logistic(z) / n);
    }
    Ok((loss / n, grad))
}

fn norm<T: Real>(v: &[T]) -> T {
    v.iter().map(|&x| x * x).sum::<T>().sqrt().max(T::lit(1e-12))
}

/// `w.x / (|w| |x|)`, clamped to [-1, 1].
pub fn cosine_score<T: Real>(w: &[T], x: &[T]) -> T {
    let dot: T = w.iter().zip(x).map(|(&a, &b)| a * b).sum();
    (dot / (norm(w) * norm(x))).max(-T::one()).min(T::one())
}

/// Gradients of `g * cos(w, x)` with respect to `x` and `w`.
pub fn cosine_backward<T: Real>(w: &[T], x: &[T], g: T) -> (Vec<T>, Vec<T>) {
    let (nw, nx) = (norm(w), norm(x));
    let dot: T = w.iter().zip(x).map(|(&a, &b)| a * b).sum();
    let c = dot / (nw * nx);
    let dx = w
        .iter()
        .zip(x)
        .map(|(&wi, &xi)| g * (wi / nw - c * xi / nx) / nx)
        .collect();
    let dw = w
        .iter()
        .zip(x)
        .map(|(&wi, &xi)| g * (xi / nx - c * wi / nw) / nw)
        .collect();
    (dx, dw)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn loss_at_margins_is_log2() {
        for alpha in [1.0, 5.0, 20.0, 64.0] {
            let cfg = OcSoftmaxConfig { alpha, ..Default::default() };
            let (l0, _) = oc_softmax_loss(&[cfg.m0], &[0], &cfg).unwrap();
            let (l1, _) = oc_softmax_loss(&[cfg.m1], &[1], &cfg).unwrap();
            assert!((l0 - 2f64.ln()).abs() < 1e-12);
            assert!((l1 - 2f64.ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn saturated_target() {
        let cfg = OcSoftmaxConfig::default();
        let (l, _) = oc_softmax_loss(&[1.0], &[0], &cfg).unwrap();
        // softplus(20 * (0.9 - 1)) = ln(1 + e^-2)
        assert!((l - 0.126928).abs() < 1e-6);
        assert!((l - (1.0 + (-2.0f64).exp()).ln()).abs() < 1e-15);
    }

    #[test]
    fn invalid_margins() {
        let cfg = OcSoftmaxConfig { m0: 0.2, m1: 0.2, alpha: 20.0 };
        assert!(matches!(oc_softmax_loss(&[0.0], &[0], &cfg), Err(Error::InvalidMargins { .. })));
    }

    #[test]
    fn gradient_matches_central_differences() {
        let cfg = OcSoftmaxConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let n = rng.random_range(1..10);
            let scores: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let labels: Vec<u8> = (0..n).map(|_| rng.random_range(0..2)).collect();
            let (_, grad) = oc_softmax_loss(&scores, &labels, &cfg).unwrap();
            let h = 1e-4;
            for i in 0..n {
                let mut p = scores.clone();
                p[i] += h;
                let mut m = scores.clone();
                m[i] -= h;
                let fd = (oc_softmax_loss(&p, &labels, &cfg).unwrap().0
                    - oc_softmax_loss(&m, &labels, &cfg).unwrap().0)
                    / (2.0 * h);
                let rel = (fd - grad[i]).abs() / grad[i].abs().max(fd.abs()).max(1e-6);
                assert!(rel < 1e-5, "rel {rel} fd {fd} an {}", grad[i]);
            }
        }
    }

    #[test]
    fn cosine_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let w: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
        let x: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (dx, dw) = cosine_backward(&w, &x, 1.0);
        let h = 1e-6;
        for i in 0..6 {
            let mut xp = x.clone();
            xp[i] += h;
            let mut xm = x.clone();
            xm[i] -= h;
            let fd = (cosine_score(&w, &xp) - cosine_score(&w, &xm)) / (2.0 * h);
            assert!((fd - dx[i]).abs() < 1e-8);
            let mut wp = w.clone();
            wp[i] += h;
            let mut wm = w.clone();
            wm[i] -= h;
            let fd = (cosine_score(&wp, &x) - cosine_score(&wm, &x)) / (2.0 * h);
            assert!((fd - dw[i]).abs() < 1e-8);
        }
        let c = cosine_score(&w, &x);
        assert!((-1.0..=1.0).contains(&c));
    }
}
