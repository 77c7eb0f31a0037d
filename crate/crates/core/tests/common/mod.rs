#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use spoofdet::nnet::{oc_softmax_loss, Grads, Module, OcSoftmaxConfig, Tensor, XResNet, XResNetConfig};

pub fn tiny_config(se: bool) -> XResNetConfig {
    XResNetConfig {
        width_multiplier: 1.0 / 32.0,
        se_enabled: se,
        se_reduction: 2,
        embedding_dim: 8,
        ..Default::default()
    }
}

/// Tiny f64 network with batch-norm affine parameters moved away from their
/// initial values, so that every branch carries gradient.
pub fn perturbed_model(cfg: &XResNetConfig, seed: u64) -> XResNet<f64> {
    let mut model = XResNet::<f64>::build(cfg, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    model.visit_mut(&mut |p| {
        if p.name.ends_with(".gamma") {
            p.value.iter_mut().for_each(|v| *v = rng.random_range(0.5..1.5));
        } else if p.name.ends_with(".beta") || p.name.ends_with(".bias") {
            p.value.iter_mut().for_each(|v| *v = rng.random_range(-0.2..0.2));
        }
    });
    model
}

pub fn random_batch(n: usize, t: usize, seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..n * 70 * t).map(|_| rng.sample(StandardNormal)).collect();
    Tensor::from_vec([n, 1, 70, t], data)
}

pub fn batch_loss(model: &XResNet<f64>, x: &Tensor<f64>, labels: &[u8]) -> f64 {
    let mut m = model.clone();
    let cache = m.forward_train(x).unwrap();
    oc_softmax_loss(&m.scores(&cache), labels, &OcSoftmaxConfig::default()).unwrap().0
}

pub fn analytic_grads(model: &XResNet<f64>, x: &Tensor<f64>, labels: &[u8]) -> Grads<f64> {
    let mut m = model.clone();
    let cache = m.forward_train(x).unwrap();
    let (_, dscores) = oc_softmax_loss(&m.scores(&cache), labels, &OcSoftmaxConfig::default()).unwrap();
    let mut grads = Grads::zeros_like(model);
    m.backward(&cache, &dscores, &mut grads);
    grads
}

#[derive(Debug, Clone)]
pub struct GradCheck {
    pub max_rel: f64,
    pub worst: String,
    pub n_checked: usize,
}

pub fn relative_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

/// Central differences over every trainable scalar of the network.
pub fn full_gradient_check(se: bool, seed: u64) -> GradCheck {
    let cfg = tiny_config(se);
    let model = perturbed_model(&cfg, seed);
    let x = random_batch(2, 64, seed + 1);
    let labels = [0u8, 1];
    let grads = analytic_grads(&model, &x, &labels);

    let mut params = Vec::new();
    model.visit(&mut |p| {
        if p.trainable {
            params.push((p.id(), p.name.clone(), p.len()));
        }
    });
    let h = 1e-6;
    let mut report = GradCheck {
        max_rel: 0.0,
        worst: String::new(),
        n_checked: 0,
    };
    for (id, name, len) in params {
        for i in 0..len {
            let shifted = |delta: f64| {
                let mut m = model.clone();
                m.visit_mut(&mut |p| {
                    if p.id() == id {
                        p.value[i] += delta;
                    }
                });
                batch_loss(&m, &x, &labels)
            };
            let numeric = (shifted(h) - shifted(-h)) / (2.0 * h);
            let analytic = grads.slots[id][i];
            let rel = relative_error(analytic, numeric);
            report.n_checked += 1;
            if rel > report.max_rel {
                report.max_rel = rel;
                report.worst = format!("{name}[{i}] analytic {analytic:e} numeric {numeric:e}");
            }
        }
    }
    report
}

/// EER of the convex hull of every achievable (false alarm, miss) pair,
/// found by trying every threshold and every pair of operating points whose
/// segment reaches the diagonal. "Score >= threshold" counts as a target
/// decision.
pub fn brute_force_eer(targets: &[f64], nontargets: &[f64]) -> f64 {
    let (m, n) = (targets.len() as i128, nontargets.len() as i128);
    let mut cands: Vec<f64> = targets.iter().chain(nontargets).copied().collect();
    cands.sort_by(f64::total_cmp);
    let mids: Vec<f64> = cands.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
    cands.extend(mids);
    cands.push(f64::INFINITY);
    cands.push(f64::NEG_INFINITY);
    // points scaled by n*m: x = fa * m, y = miss * n
    let points: Vec<(i128, i128)> = cands
        .iter()
        .map(|&th| {
            let fa = nontargets.iter().filter(|&&s| s >= th).count() as i128;
            let miss = targets.iter().filter(|&&s| s < th).count() as i128;
            (fa * m, miss * n)
        })
        .collect();
    let mut best: Option<(i128, i128)> = None;
    for &(x1, y1) in &points {
        for &(x2, y2) in &points {
            let (d1, d2) = (x1 - y1, x2 - y2);
            let cand = if d1 == 0 {
                (x1, 1)
            } else if d1 < 0 && d2 > 0 {
                // where the segment meets x = y
                (x2 * y1 - x1 * y2, (x2 - x1) - (y2 - y1))
            } else {
                continue;
            };
            if best.is_none_or(|(bn, bd)| cand.0 * bd < bn * cand.1) {
                best = Some(cand);
            }
        }
    }
    let (num, den) = best.expect("the threshold sweep always straddles the diagonal");
    let g = gcd(num, den * n * m);
    (num / g) as f64 / ((den * n * m) / g) as f64
}

fn gcd(a: i128, b: i128) -> i128 {
    if b == 0 { a.abs().max(1) } else { gcd(b, a % b) }
}

fn log_normal(x: f64, mean: f64, var: f64) -> f64 {
    -0.5 * ((2.0 * std::f64::consts::PI * var).ln() + (x - mean) * (x - mean) / var)
}

/// Same-class versus independent log-likelihood ratio for scalar embeddings
/// with class variance `b` and residual variance `w`, through the predictive
/// density of the test value given the enrollment.
pub fn plda_1d_llr(mu: f64, b: f64, w: f64, enroll: &[f64], x: f64) -> f64 {
    let n = enroll.len() as f64;
    let mean = enroll.iter().sum::<f64>() / n;
    let shrink = n * b / (w + n * b);
    let pred_mean = mu + shrink * (mean - mu);
    let pred_var = w + b * w / (w + n * b);
    log_normal(x, pred_mean, pred_var) - log_normal(x, mu, b + w)
}
