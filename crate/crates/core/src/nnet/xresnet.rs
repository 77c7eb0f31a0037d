//! x-ResNet embedding extractor: three-conv stem, four residual stages with
//! average-pool shortcut down-sampling, optional squeeze-and-excitation,
//! statistics pooling and a linear embedding layer, plus the one-class head.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{
    relu, relu_backward, relu_in_place, AvgPool2, BatchNorm2d, BnCache, Conv2d, Linear, MaxPool, SeBlock, SeCache,
    StatsCache, StatsPool,
};
use super::loss::{cosine_backward, cosine_score};
use super::param::{Grads, Module, Param, ParamBuilder, Tensor};
use super::real::Real;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct XResNetConfig {
    pub blocks_per_stage: Vec<usize>,
    /// Full-width channel counts; each stage doubles the previous one.
    pub stage_channels: Vec<usize>,
    pub stem_channels: [usize; 3],
    pub width_multiplier: f64,
    pub se_enabled: bool,
    pub se_reduction: usize,
    pub embedding_dim: usize,
    pub input_dim: usize,
    pub stem_max_pool: bool,
}

impl Default for XResNetConfig {
    fn default() -> Self {
        Self {
            blocks_per_stage: vec![2, 2, 2, 2],
            stage_channels: vec![64, 128, 256, 512],
            stem_channels: [32, 32, 64],
            width_multiplier: 1.0,
            se_enabled: false,
            se_reduction: 16,
            embedding_dim: 64,
            input_dim: 70,
            stem_max_pool: true,
        }
    }
}

impl XResNetConfig {
    pub fn scaled(&self, c: usize) -> usize {
        ((c as f64 * self.width_multiplier).round() as usize).max(1)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.blocks_per_stage.len() != 4 {
            return bad(format!("expected 4 residual stages, got {}", self.blocks_per_stage.len()));
        }
        if self.stage_channels.len() != 4 {
            return bad(format!("expected 4 stage widths, got {}", self.stage_channels.len()));
        }
        if self.blocks_per_stage.iter().any(|&b| b == 0) {
            return bad("every stage needs at least one block".into());
        }
        if self.stage_channels.windows(2).any(|w| w[1] != 2 * w[0]) {
            return bad("stage widths must double from stage to stage".into());
        }
        if !(self.width_multiplier > 0.0) {
            return bad("width multiplier must be positive".into());
        }
        if self.embedding_dim == 0 || self.input_dim == 0 {
            return bad("embedding and input dimensions must be positive".into());
        }
        if self.se_enabled {
            if self.se_reduction == 0 {
                return bad("se_reduction must be positive".into());
            }
            for &c in &self.stage_channels {
                let c = self.scaled(c);
                if c % self.se_reduction != 0 {
                    return bad(format!("se_reduction {} does not divide {c} channels", self.se_reduction));
                }
            }
        }
        Ok(())
    }

    /// Stride-2 layers the time axis passes through.
    pub fn reductions(&self) -> usize {
        1 + usize::from(self.stem_max_pool) + 3
    }

    /// Shortest input that survives every stride-2 reduction with at least one frame.
    pub fn min_frames(&self) -> usize {
        1 << self.reductions()
    }

    /// Time (or frequency) extent after the network's down-sampling chain.
    pub fn reduced_len(&self, len: usize) -> usize {
        (0..self.reductions()).fold(len, |l, _| l.div_ceil(2))
    }
}

/// Average-pool + 1x1 conv + batch norm shortcut.
#[derive(Debug, Clone, PartialEq)]
pub struct Shortcut<T> {
    pub pool: bool,
    pub conv: Conv2d<T>,
    pub bn: BatchNorm2d<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResidualBlock<T> {
    pub conv1: Conv2d<T>,
    pub bn1: BatchNorm2d<T>,
    pub conv2: Conv2d<T>,
    pub bn2: BatchNorm2d<T>,
    pub se: Option<SeBlock<T>>,
    pub shortcut: Option<Shortcut<T>>,
}

struct BlockCache<T> {
    x: Tensor<T>,
    bn1: BnCache<T>,
    a1: Tensor<T>,
    bn2: BnCache<T>,
    b2: Tensor<T>,
    se: Option<SeCache<T>>,
    sc_pooled: Option<Tensor<T>>,
    sc_bn: Option<BnCache<T>>,
    out: Tensor<T>,
}

impl<T: Real> ResidualBlock<T> {
    fn new<R: rand::Rng>(
        pb: &mut ParamBuilder<'_, R>,
        in_c: usize,
        out_c: usize,
        stride: usize,
        se: Option<usize>,
    ) -> Self {
        let conv1 = Conv2d::new(pb, "conv1", in_c, out_c, 3, stride);
        let bn1 = BatchNorm2d::new(pb, "bn1", out_c, 1.0);
        let conv2 = Conv2d::new(pb, "conv2", out_c, out_c, 3, 1);
        // zero-gamma final norm: the block starts as an identity map
        let bn2 = BatchNorm2d::new(pb, "bn2", out_c, 0.0);
        let se = se.map(|r| pb.scoped("se", |pb| SeBlock::new(pb, "fc", out_c, r)));
        let shortcut = (stride != 1 || in_c != out_c).then(|| {
            pb.scoped("shortcut", |pb| Shortcut {
                pool: stride != 1,
                conv: Conv2d::new(pb, "conv", in_c, out_c, 1, 1),
                bn: BatchNorm2d::new(pb, "bn", out_c, 1.0),
            })
        });
        Self {
            conv1,
            bn1,
            conv2,
            bn2,
            se,
            shortcut,
        }
    }

    fn forward_eval(&self, x: &Tensor<T>) -> Tensor<T> {
        let mut a1 = self.bn1.forward_eval(&self.conv1.forward(x));
        relu_in_place(&mut a1);
        let mut b2 = self.bn2.forward_eval(&self.conv2.forward(&a1));
        if let Some(se) = &self.se {
            b2 = se.forward(&b2);
        }
        match &self.shortcut {
            Some(sc) => {
                let pooled = if sc.pool { AvgPool2::forward(x) } else { x.clone() };
                b2.add_assign(&sc.bn.forward_eval(&sc.conv.forward(&pooled)));
            }
            None => b2.add_assign(x),
        }
        relu_in_place(&mut b2);
        b2
    }

    fn forward_train(&mut self, x: Tensor<T>) -> (Tensor<T>, BlockCache<T>) {
        let (a1, bn1) = self.bn1.forward_train(&self.conv1.forward(&x));
        let a1 = relu(&a1);
        let (b2, bn2) = self.bn2.forward_train(&self.conv2.forward(&a1));
        let (mut sum, se, b2) = match &self.se {
            Some(se) => {
                let (y, cache) = se.forward_train(&b2);
                (y, Some(cache), b2)
            }
            None => (b2.clone(), None, b2),
        };
        let (sc_pooled, sc_bn) = match &mut self.shortcut {
            Some(sc) => {
                let pooled = if sc.pool { AvgPool2::forward(&x) } else { x.clone() };
                let (s, cache) = sc.bn.forward_train(&sc.conv.forward(&pooled));
                sum.add_assign(&s);
                (Some(pooled), Some(cache))
            }
            None => {
                sum.add_assign(&x);
                (None, None)
            }
        };
        let out = relu(&sum);
        (
            out.clone(),
            BlockCache {
                x,
                bn1,
                a1,
                bn2,
                b2,
                se,
                sc_pooled,
                sc_bn,
                out,
            },
        )
    }

    fn backward(&self, cache: &BlockCache<T>, dy: &Tensor<T>, grads: &mut Grads<T>) -> Tensor<T> {
        let dsum = relu_backward(&cache.out, dy);
        let mut dx = match (&self.shortcut, &cache.sc_pooled, &cache.sc_bn) {
            (Some(sc), Some(pooled), Some(bn_cache)) => {
                let dconv = sc.bn.backward(bn_cache, &dsum, grads);
                let dpooled = sc.conv.backward(pooled, &dconv, grads);
                if sc.pool {
                    AvgPool2::backward(cache.x.shape, &dpooled)
                } else {
                    dpooled
                }
            }
            _ => dsum.clone(),
        };
        let db2 = match (&self.se, &cache.se) {
            (Some(se), Some(se_cache)) => se.backward(&cache.b2, se_cache, &dsum, grads),
            _ => dsum,
        };
        let dc2 = self.bn2.backward(&cache.bn2, &db2, grads);
        let da1 = self.conv2.backward(&cache.a1, &dc2, grads);
        let dc1 = self.bn1.backward(&cache.bn1, &relu_backward(&cache.a1, &da1), grads);
        dx.add_assign(&self.conv1.backward(&cache.x, &dc1, grads));
        dx
    }
}

impl<T: Real> Module<T> for ResidualBlock<T> {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&'a Param<T>)) {
        self.conv1.visit(f);
        self.bn1.visit(f);
        self.conv2.visit(f);
        self.bn2.visit(f);
        if let Some(se) = &self.se {
            se.visit(f);
        }
        if let Some(sc) = &self.shortcut {
            sc.conv.visit(f);
            sc.bn.visit(f);
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        self.conv1.visit_mut(f);
        self.bn1.visit_mut(f);
        self.conv2.visit_mut(f);
        self.bn2.visit_mut(f);
        if let Some(se) = &mut self.se {
            se.visit_mut(f);
        }
        if let Some(sc) = &mut self.shortcut {
            sc.conv.visit_mut(f);
            sc.bn.visit_mut(f);
        }
    }
}

/// The one-class head: a single target-class direction.
#[derive(Debug, Clone, PartialEq)]
pub struct OcSoftmaxHead<T> {
    /// Stored unnormalized; normalized on use.
    pub w0: Param<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct XResNet<T> {
    pub config: XResNetConfig,
    pub stem_convs: Vec<Conv2d<T>>,
    pub stem_bns: Vec<BatchNorm2d<T>>,
    pub stages: Vec<Vec<ResidualBlock<T>>>,
    pub embedding: Linear<T>,
    pub head: OcSoftmaxHead<T>,
}

/// Everything the backward pass needs from a training forward pass.
pub struct ForwardCache<T> {
    input_shape: [usize; 4],
    stem_inputs: Vec<Tensor<T>>,
    stem_bn: Vec<BnCache<T>>,
    stem_out: Vec<Tensor<T>>,
    pool_arg: Option<(Vec<u32>, [usize; 4])>,
    blocks: Vec<BlockCache<T>>,
    last: Tensor<T>,
    stats: StatsCache<T>,
    pooled: Tensor<T>,
    pub embeddings: Tensor<T>,
}

impl<T: Real> XResNet<T> {
    /// He-normal convolutions, unit-gamma batch norm except the last norm of
    /// each residual branch (gamma 0).
    pub fn build(cfg: &XResNetConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pb = ParamBuilder::new(&mut rng);
        let stem_c: Vec<usize> = cfg.stem_channels.iter().map(|&c| cfg.scaled(c)).collect();
        let mut stem_convs = Vec::new();
        let mut stem_bns = Vec::new();
        let mut in_c = 1;
        for (i, &c) in stem_c.iter().enumerate() {
            let stride = if i == 0 { 2 } else { 1 };
            pb.scoped(&format!("stem{i}"), |pb| {
                stem_convs.push(Conv2d::new(pb, "conv", in_c, c, 3, stride));
                stem_bns.push(BatchNorm2d::new(pb, "bn", c, 1.0));
            });
            in_c = c;
        }
        let se = cfg.se_enabled.then_some(cfg.se_reduction);
        let mut stages = Vec::new();
        for (s, (&blocks, &width)) in cfg.blocks_per_stage.iter().zip(&cfg.stage_channels).enumerate() {
            let out_c = cfg.scaled(width);
            let mut stage = Vec::new();
            for b in 0..blocks {
                let stride = if s > 0 && b == 0 { 2 } else { 1 };
                stage.push(pb.scoped(&format!("stage{s}.block{b}"), |pb| {
                    ResidualBlock::new(pb, in_c, out_c, stride, se)
                }));
                in_c = out_c;
            }
            stages.push(stage);
        }
        let freq = cfg.reduced_len(cfg.input_dim);
        let pooled_dim = 2 * in_c * freq;
        let embedding = Linear::new(
            &mut pb,
            "embedding",
            pooled_dim,
            cfg.embedding_dim,
            (1.0 / pooled_dim as f64).sqrt(),
        );
        let w0 = pb.normal("head.w0", &[cfg.embedding_dim], 1.0);
        Ok(Self {
            config: cfg.clone(),
            stem_convs,
            stem_bns,
            stages,
            embedding,
            head: OcSoftmaxHead { w0 },
        })
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        if x.c() != 1 || x.h() != self.config.input_dim {
            return Err(Error::DimensionMismatch {
                expected: self.config.input_dim,
                got: x.h(),
            });
        }
        if x.w() < self.config.min_frames() {
            return Err(Error::InputTooShort {
                frames: x.w(),
                min: self.config.min_frames(),
            });
        }
        Ok(())
    }

    /// Inference-mode embeddings (`[N, E, 1, 1]`) for a batch `[N, 1, F, T]`.
    pub fn embed(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(x)?;
        let mut h = x.clone();
        for (conv, bn) in self.stem_convs.iter().zip(&self.stem_bns) {
            h = bn.forward_eval(&conv.forward(&h));
            relu_in_place(&mut h);
        }
        if self.config.stem_max_pool {
            h = MaxPool::forward(&h).0;
        }
        for block in self.stages.iter().flatten() {
            h = block.forward_eval(&h);
        }
        let (pooled, _) = StatsPool::forward(&h);
        Ok(self.embedding.forward(&pooled))
    }

    /// Cosine similarity of an embedding to the target-class direction.
    pub fn score(&self, embedding: &[T]) -> T {
        cosine_score(&self.head.w0.value, embedding)
    }

    /// Training-mode forward pass (batch-statistics normalization).
    pub fn forward_train(&mut self, x: &Tensor<T>) -> Result<ForwardCache<T>> {
        self.check_input(x)?;
        let mut stem_inputs = Vec::new();
        let mut stem_bn = Vec::new();
        let mut stem_out = Vec::new();
        let mut h = x.clone();
        for (conv, bn) in self.stem_convs.iter().zip(self.stem_bns.iter_mut()) {
            let (y, cache) = bn.forward_train(&conv.forward(&h));
            stem_inputs.push(h);
            stem_bn.push(cache);
            h = relu(&y);
            stem_out.push(h.clone());
        }
        let pool_arg = if self.config.stem_max_pool {
            let shape = h.shape;
            let (y, arg) = MaxPool::forward(&h);
            h = y;
            Some((arg, shape))
        } else {
            None
        };
        let mut blocks = Vec::new();
        for block in self.stages.iter_mut().flatten() {
            let (y, cache) = block.forward_train(h);
            blocks.push(cache);
            h = y;
        }
        let (pooled, stats) = StatsPool::forward(&h);
        let embeddings = self.embedding.forward(&pooled);
        Ok(ForwardCache {
            input_shape: x.shape,
            stem_inputs,
            stem_bn,
            stem_out,
            pool_arg,
            blocks,
            last: h,
            stats,
            pooled,
            embeddings,
        })
    }

    /// Head cosine scores for the embeddings of a training forward pass.
    pub fn scores(&self, cache: &ForwardCache<T>) -> Vec<T> {
        let e = self.config.embedding_dim;
        cache.embeddings.data.chunks_exact(e).map(|emb| self.score(emb)).collect()
    }

    /// Back-propagates loss gradients with respect to the cosine scores.
    pub fn backward(&self, cache: &ForwardCache<T>, dscores: &[T], grads: &mut Grads<T>) -> Tensor<T> {
        let e = self.config.embedding_dim;
        let mut demb = Tensor::zeros(cache.embeddings.shape);
        let w0 = &self.head.w0.value;
        let mut dw0 = vec![T::zero(); e];
        for (i, emb) in cache.embeddings.data.chunks_exact(e).enumerate() {
            let (dx, dw) = cosine_backward(w0, emb, dscores[i]);
            demb.data[i * e..(i + 1) * e].copy_from_slice(&dx);
            for (a, b) in dw0.iter_mut().zip(&dw) {
                *a += *b;
            }
        }
        for (g, d) in grads.slot(&self.head.w0).iter_mut().zip(&dw0) {
            *g += *d;
        }
        self.backward_embeddings(cache, &demb, grads)
    }

    /// Back-propagates gradients with respect to the embeddings; returns the
    /// input gradient.
    pub fn backward_embeddings(&self, cache: &ForwardCache<T>, demb: &Tensor<T>, grads: &mut Grads<T>) -> Tensor<T> {
        let dpooled = self.embedding.backward(&cache.pooled, demb, grads);
        let mut dh = StatsPool::backward(&cache.last, &cache.stats, &dpooled);
        let blocks: Vec<_> = self.stages.iter().flatten().collect();
        for (block, bc) in blocks.into_iter().zip(&cache.blocks).rev() {
            dh = block.backward(bc, &dh, grads);
        }
        if let Some((arg, shape)) = &cache.pool_arg {
            dh = MaxPool::backward(*shape, arg, &dh);
        }
        for i in (0..self.stem_convs.len()).rev() {
            let dpre = relu_backward(&cache.stem_out[i], &dh);
            let dconv = self.stem_bns[i].backward(&cache.stem_bn[i], &dpre, grads);
            dh = self.stem_convs[i].backward(&cache.stem_inputs[i], &dconv, grads);
        }
        debug_assert_eq!(dh.shape, cache.input_shape);
        dh
    }

    /// Converts every parameter to another precision.
    pub fn cast<U: Real>(&self) -> XResNet<U> {
        fn conv<T: Real, U: Real>(c: &Conv2d<T>) -> Conv2d<U> {
            Conv2d {
                weight: cast_param(&c.weight),
                in_c: c.in_c,
                out_c: c.out_c,
                k: c.k,
                stride: c.stride,
                pad: c.pad,
            }
        }
        fn bn<T: Real, U: Real>(b: &BatchNorm2d<T>) -> BatchNorm2d<U> {
            BatchNorm2d {
                gamma: cast_param(&b.gamma),
                beta: cast_param(&b.beta),
                running_mean: cast_param(&b.running_mean),
                running_var: cast_param(&b.running_var),
                eps: b.eps,
                momentum: b.momentum,
            }
        }
        fn lin<T: Real, U: Real>(l: &Linear<T>) -> Linear<U> {
            Linear {
                weight: cast_param(&l.weight),
                bias: cast_param(&l.bias),
                in_dim: l.in_dim,
                out_dim: l.out_dim,
            }
        }
        XResNet {
            config: self.config.clone(),
            stem_convs: self.stem_convs.iter().map(conv).collect(),
            stem_bns: self.stem_bns.iter().map(bn).collect(),
            stages: self
                .stages
                .iter()
                .map(|s| {
                    s.iter()
                        .map(|b| ResidualBlock {
                            conv1: conv(&b.conv1),
                            bn1: bn(&b.bn1),
                            conv2: conv(&b.conv2),
                            bn2: bn(&b.bn2),
                            se: b.se.as_ref().map(|se| SeBlock {
                                squeeze: lin(&se.squeeze),
                                excite: lin(&se.excite),
                            }),
                            shortcut: b.shortcut.as_ref().map(|sc| Shortcut {
                                pool: sc.pool,
                                conv: conv(&sc.conv),
                                bn: bn(&sc.bn),
                            }),
                        })
                        .collect()
                })
                .collect(),
            embedding: lin(&self.embedding),
            head: OcSoftmaxHead {
                w0: cast_param(&self.head.w0),
            },
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

impl<T: Real> Module<T> for XResNet<T> {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&'a Param<T>)) {
        for (c, b) in self.stem_convs.iter().zip(&self.stem_bns) {
            c.visit(f);
            b.visit(f);
        }
        for block in self.stages.iter().flatten() {
            block.visit(f);
        }
        self.embedding.visit(f);
        f(&self.head.w0);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        for (c, b) in self.stem_convs.iter_mut().zip(self.stem_bns.iter_mut()) {
            c.visit_mut(f);
            b.visit_mut(f);
        }
        for block in self.stages.iter_mut().flatten() {
            block.visit_mut(f);
        }
        self.embedding.visit_mut(f);
        f(&mut self.head.w0);
    }
}
