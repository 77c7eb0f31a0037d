use serde::{Deserialize, Serialize};

use super::param::{Grads, Module};
use super::real::Real;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled: parameters shrink by `lr * weight_decay` before the Adam step.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 2e-3,
            beta1: 0.9,
            beta2: 0.99,
            eps: 1e-5,
            weight_decay: 0.01,
        }
    }
}

/// First and second moment estimates for one parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments<T> {
    pub m: Vec<T>,
    pub v: Vec<T>,
}

/// One bias-corrected Adam update with decoupled weight decay; `step` is the
/// 1-based step number.
pub fn adam_update<T: Real>(
    param: &mut [T],
    grad: &[T],
    moments: &mut Moments<T>,
    step: u64,
    cfg: &AdamConfig,
) -> Result<()> {
    if param.len() != grad.len() || moments.m.len() != param.len() || moments.v.len() != param.len() {
        return Err(Error::ShapeMismatch(format!(
            "param {} / grad {} / moments {}",
            param.len(),
            grad.len(),
            moments.m.len()
        )));
    }
    let (b1, b2) = (T::lit(cfg.beta1), T::lit(cfg.beta2));
    let c1 = T::lit(1.0 - cfg.beta1.powi(step as i32));
    let c2 = T::lit(1.0 - cfg.beta2.powi(step as i32));
    let lr = T::lit(cfg.lr);
    let eps = T::lit(cfg.eps);
    let decay = T::lit(1.0 - cfg.lr * cfg.weight_decay);
    for i in 0..param.len() {
        let g = grad[i];
        let m = b1 * moments.m[i] + (T::one() - b1) * g;
        let v = b2 * moments.v[i] + (T::one() - b2) * g * g;
        moments.m[i] = m;
        moments.v[i] = v;
        let mhat = m / c1;
        let vhat = v / c2;
        param[i] = param[i] * decay - lr * mhat / (vhat.sqrt() + eps);
    }
    Ok(())
}

/// Optimizer state for a whole module, indexed by parameter id.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    pub step: u64,
    moments: Vec<Moments<T>>,
}

impl<T: Real> AdamState<T> {
    pub fn new(module: &impl Module<T>, config: AdamConfig) -> Self {
        let mut moments: Vec<Moments<T>> = Vec::new();
        module.visit(&mut |p| {
            if moments.len() <= p.id() {
                moments.resize(p.id() + 1, Moments { m: vec![], v: vec![] });
            }
            let n = if p.trainable { p.len() } else { 0 };
            moments[p.id()] = Moments {
                m: vec![T::zero(); n],
                v: vec![T::zero(); n],
            };
        });
        Self {
            config,
            step: 0,
            moments,
        }
    }

    pub fn step(&mut self, module: &mut impl Module<T>, grads: &Grads<T>) -> Result<()> {
        self.step += 1;
        let mut result = Ok(());
        let (step, cfg) = (self.step, self.config);
        let moments = &mut self.moments;
        module.visit_mut(&mut |p| {
            if !p.trainable || result.is_err() {
                return;
            }
            let id = p.id();
            match (grads.slots.get(id), moments.get_mut(id)) {
                (Some(g), Some(m)) => result = adam_update(&mut p.value, g, m, step, &cfg),
                _ => result = Err(Error::ShapeMismatch(format!("no optimizer slot for {}", p.name))),
            }
        });
        result
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn moments(n: usize) -> Moments<f64> {
        Moments {
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }

    #[test]
    fn zero_gradient_no_decay() {
        let cfg = AdamConfig {
            weight_decay: 0.0,
            ..Default::default()
        };
        let mut p = vec![0.3, -1.2];
        adam_update(&mut p, &[0.0, 0.0], &mut moments(2), 1, &cfg).unwrap();
        assert_eq!(p, vec![0.3, -1.2]);
    }

    #[test]
    fn zero_gradient_decay_only() {
        let cfg = AdamConfig::default();
        let mut p = vec![0.5, -2.0];
        adam_update(&mut p, &[0.0, 0.0], &mut moments(2), 1, &cfg).unwrap();
        assert!((p[0] - 0.5 * (1.0 - 2e-5)).abs() < 1e-15);
        assert!((p[1] + 2.0 * (1.0 - 2e-5)).abs() < 1e-15);
    }

    #[test]
    fn first_step_by_hand() {
        let cfg = AdamConfig {
            weight_decay: 0.0,
            ..Default::default()
        };
        let mut p = vec![1.0];
        adam_update(&mut p, &[1.0], &mut moments(1), 1, &cfg).unwrap();
        // m = 0.1, v = 0.01; bias-corrected m = 1, v = 1
        let m_hat = (1.0 - 0.9) * 1.0 / (1.0 - 0.9);
        let v_hat = (1.0 - 0.99) * 1.0 / (1.0 - 0.99);
        let expect = 1.0 - 2e-3 * m_hat / (f64::sqrt(v_hat) + 1e-5);
        assert!((p[0] - expect).abs() < 1e-12);
        assert!((p[0] - (1.0 - 2e-3 / (1.0 + 1e-5))).abs() < 1e-12);
    }

    #[test]
    fn shape_mismatch() {
        let mut p = vec![1.0, 2.0];
        let err = adam_update(&mut p, &[1.0], &mut moments(2), 1, &AdamConfig::default());
        assert!(matches!(err, Err(Error::ShapeMismatch(_))));
    }
}
