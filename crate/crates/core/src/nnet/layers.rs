//! Layers with explicit forward and backward passes.
//!
//! Activations are `N x C x H x W`; for the acoustic network H is frequency
//! and W is time.

use rand::Rng;

use super::param::{Grads, Module, Param, ParamBuilder, Tensor};
use super::real::{gemm, MatRef, Real};

pub fn relu<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| v.max(T::zero()))
}

pub fn relu_in_place<T: Real>(x: &mut Tensor<T>) {
    for v in &mut x.data {
        *v = v.max(T::zero());
    }
}

/// Gradient of ReLU given its output.
pub fn relu_backward<T: Real>(y: &Tensor<T>, dy: &Tensor<T>) -> Tensor<T> {
    Tensor {
        shape: dy.shape,
        data: y
            .data
            .iter()
            .zip(&dy.data)
            .map(|(&o, &g)| if o > T::zero() { g } else { T::zero() })
            .collect(),
    }
}

pub fn sigmoid<T: Real>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

fn conv_out(size: usize, k: usize, stride: usize, pad: usize) -> usize {
    (size + 2 * pad - k) / stride + 1
}

/// Square-kernel 2-D convolution without bias (always followed by batch norm).
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d<T> {
    pub weight: Param<T>,
    pub in_c: usize,
    pub out_c: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

impl<T: Real> Conv2d<T> {
    /// He-normal initialization.
    pub fn new<R: Rng>(
        pb: &mut ParamBuilder<'_, R>,
        name: &str,
        in_c: usize,
        out_c: usize,
        k: usize,
        stride: usize,
    ) -> Self {
        let fan_in = in_c * k * k;
        let weight = pb.normal(
            &format!("{name}.weight"),
            &[out_c, in_c, k, k],
            (2.0 / fan_in as f64).sqrt(),
        );
        Self {
            weight,
            in_c,
            out_c,
            k,
            stride,
            pad: k / 2,
        }
    }

    pub fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        (
            conv_out(h, self.k, self.stride, self.pad),
            conv_out(w, self.k, self.stride, self.pad),
        )
    }

    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }

    fn im2col(&self, x: &[T], h: usize, w: usize, cols: &mut [T]) {
        let (oh, ow) = self.out_hw(h, w);
        let (k, s) = (self.k, self.stride);
        let p = self.pad as isize;
        for c in 0..self.in_c {
            let plane = &x[c * h * w..(c + 1) * h * w];
            for ky in 0..k {
                for kx in 0..k {
                    let row = (c * k + ky) * k + kx;
                    let dst = &mut cols[row * oh * ow..(row + 1) * oh * ow];
                    for oy in 0..oh {
                        let iy = (oy * s + ky) as isize - p;
                        let line = &mut dst[oy * ow..(oy + 1) * ow];
                        if iy < 0 || iy >= h as isize {
                            line.fill(T::zero());
                            continue;
                        }
                        let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                        for (ox, d) in line.iter_mut().enumerate() {
                            let ix = (ox * s + kx) as isize - p;
                            *d = if ix < 0 || ix >= w as isize {
                                T::zero()
                            } else {
                                src[ix as usize]
                            };
                        }
                    }
                }
            }
        }
    }

    fn col2im(&self, cols: &[T], h: usize, w: usize, dx: &mut [T]) {
        let (oh, ow) = self.out_hw(h, w);
        let (k, s) = (self.k, self.stride);
        let p = self.pad as isize;
        for c in 0..self.in_c {
            let plane = &mut dx[c * h * w..(c + 1) * h * w];
            for ky in 0..k {
                for kx in 0..k {
                    let row = (c * k + ky) * k + kx;
                    let src = &cols[row * oh * ow..(row + 1) * oh * ow];
                    for oy in 0..oh {
                        let iy = (oy * s + ky) as isize - p;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                        for ox in 0..ow {
                            let ix = (ox * s + kx) as isize - p;
                            if ix >= 0 && ix < w as isize {
                                dst[ix as usize] += src[oy * ow + ox];
                            }
                        }
                    }
                }
            }
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        assert_eq!(x.c(), self.in_c, "conv input channels");
        let (h, w) = (x.h(), x.w());
        let (oh, ow) = self.out_hw(h, w);
        let kk = self.in_c * self.k * self.k;
        let mut y = Tensor::zeros([x.n(), self.out_c, oh, ow]);
        let mut cols = if self.is_pointwise() {
            Vec::new()
        } else {
            vec![T::zero(); kk * oh * ow]
        };
        let wmat = MatRef::new(&self.weight.value, self.out_c, kk);
        for n in 0..x.n() {
            let cols_ref: &[T] = if self.is_pointwise() {
                x.sample(n)
            } else {
                self.im2col(x.sample(n), h, w, &mut cols);
                &cols
            };
            gemm(
                T::one(),
                wmat,
                MatRef::new(cols_ref, kk, oh * ow),
                T::zero(),
                y.sample_mut(n),
            );
        }
        y
    }

    pub fn backward(&self, x: &Tensor<T>, dy: &Tensor<T>, grads: &mut Grads<T>) -> Tensor<T> {
        let (h, w) = (x.h(), x.w());
        let (oh, ow) = (dy.h(), dy.w());
        let kk = self.in_c * self.k * self.k;
        let mut dx = Tensor::zeros(x.shape);
        let mut cols = vec![T::zero(); kk * oh * ow];
        let mut dcols = vec![T::zero(); kk * oh * ow];
        let wmat = MatRef::new(&self.weight.value, self.out_c, kk);
        let dw = grads.slot(&self.weight);
        for n in 0..x.n() {
            let dyn_ = MatRef::new(dy.sample(n), self.out_c, oh * ow);
            if self.is_pointwise() {
                gemm(T::one(), dyn_, MatRef::new(x.sample(n), kk, oh * ow).t(), T::one(), dw);
                gemm(T::one(), wmat.t(), dyn_, T::zero(), dx.sample_mut(n));
            } else {
                self.im2col(x.sample(n), h, w, &mut cols);
                gemm(T::one(), dyn_, MatRef::new(&cols, kk, oh * ow).t(), T::one(), dw);
                gemm(T::one(), wmat.t(), dyn_, T::zero(), &mut dcols);
                self.col2im(&dcols, h, w, dx.sample_mut(n));
            }
        }
        dx
    }
}

impl<T: Real> Module<T> for Conv2d<T> {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&'a Param<T>)) {
        f(&self.weight);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        f(&mut self.weight);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm2d<T> {
    pub gamma: Param<T>,
    pub beta: Param<T>,
    pub running_mean: Param<T>,
    pub running_var: Param<T>,
    pub eps: f64,
    pub momentum: f64,
}

pub struct BnCache<T> {
    xhat: Vec<T>,
    inv_std: Vec<T>,
}

impl<T: Real> BatchNorm2d<T> {
    pub fn new<R: Rng>(pb: &mut ParamBuilder<'_, R>, name: &str, c: usize, gamma_init: f64) -> Self {
        Self {
            gamma: pb.constant(&format!("{name}.gamma"), &[c], gamma_init),
            beta: pb.constant(&format!("{name}.beta"), &[c], 0.0),
            running_mean: pb.buffer(&format!("{name}.running_mean"), &[c], 0.0),
            running_var: pb.buffer(&format!("{name}.running_var"), &[c], 1.0),
            eps: 1e-5,
            momentum: 0.1,
        }
    }

    fn channels(&self) -> usize {
        self.gamma.len()
    }

    pub fn forward_eval(&self, x: &Tensor<T>) -> Tensor<T> {
        let mut y = x.clone();
        let hw = x.h() * x.w();
        for c in 0..self.channels() {
            let inv = T::one() / (self.running_var.value[c] + T::lit(self.eps)).sqrt();
            let scale = self.gamma.value[c] * inv;
            let shift = self.beta.value[c] - self.running_mean.value[c] * scale;
            for n in 0..x.n() {
                let off = (n * self.channels() + c) * hw;
                for v in &mut y.data[off..off + hw] {
                    *v = *v * scale + shift;
                }
            }
        }
        y
    }

    /// Normalizes with batch statistics and updates the running estimates.
    pub fn forward_train(&mut self, x: &Tensor<T>) -> (Tensor<T>, BnCache<T>) {
        let cn = self.channels();
        assert_eq!(x.c(), cn, "batch norm channels");
        let hw = x.h() * x.w();
        let count = (x.n() * hw) as f64;
        let mut y = Tensor::zeros(x.shape);
        let mut xhat = vec![T::zero(); x.data.len()];
        let mut inv_std = vec![T::zero(); cn];
        for c in 0..cn {
            let mut sum = 0.0;
            for n in 0..x.n() {
                let off = (n * cn + c) * hw;
                sum += x.data[off..off + hw].iter().map(|v| v.as_f64()).sum::<f64>();
            }
            let mean = sum / count;
            let mut sq = 0.0;
            for n in 0..x.n() {
                let off = (n * cn + c) * hw;
                sq += x.data[off..off + hw]
                    .iter()
                    .map(|v| (v.as_f64() - mean).powi(2))
                    .sum::<f64>();
            }
            let var = sq / count;
            let inv = 1.0 / (var + self.eps).sqrt();
            inv_std[c] = T::lit(inv);
            let (mean_t, inv_t) = (T::lit(mean), T::lit(inv));
            let (g, b) = (self.gamma.value[c], self.beta.value[c]);
            for n in 0..x.n() {
                let off = (n * cn + c) * hw;
                for i in off..off + hw {
                    let xh = (x.data[i] - mean_t) * inv_t;
                    xhat[i] = xh;
                    y.data[i] = g * xh + b;
                }
            }
            let m = self.momentum;
            let unbiased = if count > 1.0 { var * count / (count - 1.0) } else { var };
            let rm = &mut self.running_mean.value[c];
            *rm = T::lit((1.0 - m) * rm.as_f64() + m * mean);
            let rv = &mut self.running_var.value[c];
            *rv = T::lit((1.0 - m) * rv.as_f64() + m * unbiased);
        }
        (y, BnCache { xhat, inv_std })
    }

    pub fn backward(&self, cache: &BnCache<T>, dy: &Tensor<T>, grads: &mut Grads<T>) -> Tensor<T> {
        let cn = self.channels();
        let hw = dy.h() * dy.w();
        let count = T::lit((dy.n() * hw) as f64);
        let mut dx = Tensor::zeros(dy.shape);
        let mut dgamma = vec![T::zero(); cn];
        let mut dbeta = vec![T::zero(); cn];
        for c in 0..cn {
            let (mut sg, mut sb) = (0.0, 0.0);
            for n in 0..dy.n() {
                let off = (n * cn + c) * hw;
                for i in off..off + hw {
                    sb += dy.data[i].as_f64();
                    sg += (dy.data[i] * cache.xhat[i]).as_f64();
                }
            }
            dgamma[c] = T::lit(sg);
            dbeta[c] = T::lit(sb);
            let k = self.gamma.value[c] * cache.inv_std[c] / count;
            for n in 0..dy.n() {
                let off = (n * cn + c) * hw;
                for i in off..off + hw {
                    dx.data[i] = k * (count * dy.data[i] - dbeta[c] - cache.xhat[i] * dgamma[c]);
                }
            }
        }
        for (g, d) in grads.slot(&self.gamma).iter_mut().zip(&dgamma) {
            *g += *d;
        }
        for (g, d) in grads.slot(&self.beta).iter_mut().zip(&dbeta) {
            *g += *d;
        }
        dx
    }
}

impl<T: Real> Module<T> for BatchNorm2d<T> {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&'a Param<T>)) {
        f(&self.gamma);
        f(&self.beta);
        f(&self.running_mean);
        f(&self.running_var);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        f(&mut self.gamma);
        f(&mut self.beta);
        f(&mut self.running_mean);
        f(&mut self.running_var);
    }
}

/// 3x3 stride-2 max pooling with one pixel of (-inf) padding.
pub struct MaxPool;

impl MaxPool {
    pub fn out_hw(h: usize, w: usize) -> (usize, usize) {
        (conv_out(h, 3, 2, 1), conv_out(w, 3, 2, 1))
    }

    /// Returns the output and, per output element, the flat input index of the max.
    pub fn forward<T: Real>(x: &Tensor<T>) -> (Tensor<T>, Vec<u32>) {
        let (h, w) = (x.h(), x.w());
        let (oh, ow) = Self::out_hw(h, w);
        let mut y = Tensor::zeros([x.n(), x.c(), oh, ow]);
        let mut arg = vec![0u32; y.data.len()];
        let planes = x.n() * x.c();
        for p in 0..planes {
            let src = &x.data[p * h * w..(p + 1) * h * w];
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = T::neg_infinity();
                    let mut best_i = 0;
                    for ky in 0..3 {
                        let iy = (oy * 2 + ky) as isize - 1;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..3 {
                            let ix = (ox * 2 + kx) as isize - 1;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            let i = iy as usize * w + ix as usize;
                            if src[i] > best {
                                best = src[i];
                                best_i = i;
                            }
                        }
                    }
                    let o = p * oh * ow + oy * ow + ox;
                    y.data[o] = best;
                    arg[o] = (p * h * w + best_i) as u32;
                }
            }
        }
        (y, arg)
    }

    pub fn backward<T: Real>(in_shape: [usize; 4], arg: &[u32], dy: &Tensor<T>) -> Tensor<T> {
        let mut dx = Tensor::zeros(in_shape);
        for (&i, &g) in arg.iter().zip(&dy.data) {
            dx.data[i as usize] += g;
        }
        dx
    }
}

/// 2x2 stride-2 average pooling in ceil mode; border windows average only
/// the pixels that exist.
pub struct AvgPool2;

impl AvgPool2 {
    pub fn out_hw(h: usize, w: usize) -> (usize, usize) {
        (h.div_ceil(2), w.div_ceil(2))
    }

    pub fn forward<T: Real>(x: &Tensor<T>) -> Tensor<T> {
        let (h, w) = (x.h(), x.w());
        let (oh, ow) = Self::out_hw(h, w);
        let mut y = Tensor::zeros([x.n(), x.c(), oh, ow]);
        for p in 0..x.n() * x.c() {
            let src = &x.data[p * h * w..(p + 1) * h * w];
            for oy in 0..oh {
                let ys = 2 * oy..(2 * oy + 2).min(h);
                for ox in 0..ow {
                    let xs = 2 * ox..(2 * ox + 2).min(w);
                    let mut s = T::zero();
                    for iy in ys.clone() {
                        for ix in xs.clone() {
                            s += src[iy * w + ix];
                        }
                    }
                    let cnt = T::lit((ys.len() * xs.len()) as f64);
                    y.data[p * oh * ow + oy * ow + ox] = s / cnt;
                }
            }
        }
        y
    }

    pub fn backward<T: Real>(in_shape: [usize; 4], dy: &Tensor<T>) -> Tensor<T> {
        let (h, w) = (in_shape[2], in_shape[3]);
        let (oh, ow) = (dy.h(), dy.w());
        let mut dx = Tensor::zeros(in_shape);
        for p in 0..in_shape[0] * in_shape[1] {
            for oy in 0..oh {
                let ys = 2 * oy..(2 * oy + 2).min(h);
                for ox in 0..ow {
                    let xs = 2 * ox..(2 * ox + 2).min(w);
                    let g = dy.data[p * oh * ow + oy * ow + ox] / T::lit((ys.len() * xs.len()) as f64);
                    for iy in ys.clone() {
                        for ix in xs.clone() {
                            dx.data[p * h * w + iy * w + ix] += g;
                        }
                    }
                }
            }
        }
        dx
    }
}

/// Fully connected layer; inputs are `[N, in, 1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear<T> {
    pub weight: Param<T>,
    pub bias: Param<T>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl<T: Real> Linear<T> {
    pub fn new<R: Rng>(pb: &mut ParamBuilder<'_, R>, name: &str, in_dim: usize, out_dim: usize, std: f64) -> Self {
        Self {
            weight: pb.normal(&format!("{name}.weight"), &[out_dim, in_dim], std),
            bias: pb.constant(&format!("{name}.bias"), &[out_dim], 0.0),
            in_dim,
            out_dim,
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        assert_eq!(x.sample_len(), self.in_dim, "linear input width");
        let n = x.n();
        let mut data = Vec::with_capacity(n * self.out_dim);
        for _ in 0..n {
            data.extend_from_slice(&self.bias.value);
        }
        gemm(
            T::one(),
            MatRef::new(&x.data, n, self.in_dim),
            MatRef::new(&self.weight.value, self.out_dim, self.in_dim).t(),
            T::one(),
            &mut data,
        );
        Tensor::from_vec([n, self.out_dim, 1, 1], data)
    }

    pub fn backward(&self, x: &Tensor<T>, dy: &Tensor<T>, grads: &mut Grads<T>) -> Tensor<T> {
        let n = x.n();
        let dyv = MatRef::new(&dy.data, n, self.out_dim);
        gemm(
            T::one(),
            dyv.t(),
            MatRef::new(&x.data, n, self.in_dim),
            T::one(),
            grads.slot(&self.weight),
        );
        let db = grads.slot(&self.bias);
        for row in dy.data.chunks_exact(self.out_dim) {
            for (g, &d) in db.iter_mut().zip(row) {
                *g += d;
            }
        }
        let mut dx = Tensor::zeros(x.shape);
        gemm(
            T::one(),
            dyv,
            MatRef::new(&self.weight.value, self.out_dim, self.in_dim),
            T::zero(),
            &mut dx.data,
        );
        dx
    }
}

impl<T: Real> Module<T> for Linear<T> {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&'a Param<T>)) {
        f(&self.weight);
        f(&self.bias);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        f(&mut self.weight);
        f(&mut self.bias);
    }
}

/// Squeeze-and-excitation channel gating.
#[derive(Debug, Clone, PartialEq)]
pub struct SeBlock<T> {
    pub squeeze: Linear<T>,
    pub excite: Linear<T>,
}

pub struct SeCache<T> {
    pooled: Tensor<T>,
    hidden: Tensor<T>,
    scales: Tensor<T>,
}

impl<T: Real> SeBlock<T> {
    pub fn new<R: Rng>(pb: &mut ParamBuilder<'_, R>, name: &str, channels: usize, reduction: usize) -> Self {
        let hidden = channels / reduction;
        Self {
            squeeze: Linear::new(pb, &format!("{name}.squeeze"), channels, hidden, (2.0 / channels as f64).sqrt()),
            excite: Linear::new(pb, &format!("{name}.excite"), hidden, channels, (1.0 / hidden as f64).sqrt()),
        }
    }

    fn gap(x: &Tensor<T>) -> Tensor<T> {
        let hw = x.h() * x.w();
        let inv = T::lit(1.0 / hw as f64);
        let data = x
            .data
            .chunks_exact(hw)
            .map(|plane| plane.iter().copied().sum::<T>() * inv)
            .collect();
        Tensor::from_vec([x.n(), x.c(), 1, 1], data)
    }

    /// Per-sample, per-channel gates in (0, 1).
    pub fn scales(&self, x: &Tensor<T>) -> Tensor<T> {
        let hidden = relu(&self.squeeze.forward(&Self::gap(x)));
        self.excite.forward(&hidden).map(sigmoid)
    }

    pub fn apply_scales(x: &Tensor<T>, scales: &Tensor<T>) -> Tensor<T> {
        let hw = x.h() * x.w();
        let mut y = x.clone();
        for (plane, &s) in y.data.chunks_exact_mut(hw).zip(&scales.data) {
            for v in plane {
                *v *= s;
            }
        }
        y
    }

    pub fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        Self::apply_scales(x, &self.scales(x))
    }

    pub fn forward_train(&self, x: &Tensor<T>) -> (Tensor<T>, SeCache<T>) {
        let pooled = Self::gap(x);
        let hidden = relu(&self.squeeze.forward(&pooled));
        let scales = self.excite.forward(&hidden).map(sigmoid);
        (
            Self::apply_scales(x, &scales),
            SeCache {
                pooled,
                hidden,
                scales,
            },
        )
    }

    pub fn backward(&self, x: &Tensor<T>, cache: &SeCache<T>, dy: &Tensor<T>, grads: &mut Grads<T>) -> Tensor<T> {
        let hw = x.h() * x.w();
        let mut dx = Self::apply_scales(dy, &cache.scales);
        let mut dpre = Tensor::zeros(cache.scales.shape);
        for (i, (gx, gy)) in x.data.chunks_exact(hw).zip(dy.data.chunks_exact(hw)).enumerate() {
            let ds: T = gx.iter().zip(gy).map(|(&a, &b)| a * b).sum();
            let s = cache.scales.data[i];
            dpre.data[i] = ds * s * (T::one() - s);
        }
        let dhidden = relu_backward(&cache.hidden, &self.excite.backward(&cache.hidden, &dpre, grads));
        let dpooled = self.squeeze.backward(&cache.pooled, &dhidden, grads);
        let inv = T::lit(1.0 / hw as f64);
        for (plane, &g) in dx.data.chunks_exact_mut(hw).zip(&dpooled.data) {
            for v in plane {
                *v += g * inv;
            }
        }
        dx
    }
}

impl<T: Real> Module<T> for SeBlock<T> {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&'a Param<T>)) {
        self.squeeze.visit(f);
        self.excite.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        self.squeeze.visit_mut(f);
        self.excite.visit_mut(f);
    }
}

/// Mean and standard deviation over time of every (channel, frequency)
/// track: `[N, C, F, T] -> [N, 2*C*F, 1, 1]`.
pub struct StatsPool;

pub struct StatsCache<T> {
    mean: Vec<T>,
    std: Vec<T>,
}

pub const STATS_EPS: f64 = 1e-5;

impl StatsPool {
    pub fn forward<T: Real>(x: &Tensor<T>) -> (Tensor<T>, StatsCache<T>) {
        let tracks = x.c() * x.h();
        let t_len = x.w();
        let inv_t = T::lit(1.0 / t_len as f64);
        let mut out = Vec::with_capacity(x.n() * 2 * tracks);
        let mut means = Vec::with_capacity(x.n() * tracks);
        let mut stds = Vec::with_capacity(x.n() * tracks);
        for n in 0..x.n() {
            let s = x.sample(n);
            let start = means.len();
            for j in 0..tracks {
                let track = &s[j * t_len..(j + 1) * t_len];
                let mean = track.iter().copied().sum::<T>() * inv_t;
                let var = track.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_t;
                means.push(mean);
                stds.push((var + T::lit(STATS_EPS)).sqrt());
            }
            out.extend_from_slice(&means[start..]);
            out.extend_from_slice(&stds[start..]);
        }
        (
            Tensor::from_vec([x.n(), 2 * tracks, 1, 1], out),
            StatsCache { mean: means, std: stds },
        )
    }

    pub fn backward<T: Real>(x: &Tensor<T>, cache: &StatsCache<T>, dy: &Tensor<T>) -> Tensor<T> {
        let tracks = x.c() * x.h();
        let t_len = x.w();
        let inv_t = T::lit(1.0 / t_len as f64);
        let mut dx = Tensor::zeros(x.shape);
        for n in 0..x.n() {
            let g = dy.sample(n);
            let s = x.sample(n);
            let d = dx.sample_mut(n);
            for j in 0..tracks {
                let (mean, std) = (cache.mean[n * tracks + j], cache.std[n * tracks + j]);
                let (gm, gs) = (g[j] * inv_t, g[tracks + j] * inv_t / std);
                for t in j * t_len..(j + 1) * t_len {
                    d[t] = gm + gs * (s[t] - mean);
                }
            }
        }
        dx
    }
}
