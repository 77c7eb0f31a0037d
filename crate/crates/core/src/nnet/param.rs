use rand::Rng;
use rand_distr::StandardNormal;

use super::real::Real;

/// Dense `N x C x H x W` activation tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    pub shape: [usize; 4],
    pub data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn zeros(shape: [usize; 4]) -> Self {
        Self {
            shape,
            data: vec![T::zero(); shape.iter().product()],
        }
    }

    pub fn from_vec(shape: [usize; 4], data: Vec<T>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), data.len(), "tensor shape/data mismatch");
        Self { shape, data }
    }

    pub fn n(&self) -> usize {
        self.shape[0]
    }

    pub fn c(&self) -> usize {
        self.shape[1]
    }

    pub fn h(&self) -> usize {
        self.shape[2]
    }

    pub fn w(&self) -> usize {
        self.shape[3]
    }

    /// Elements per sample.
    pub fn sample_len(&self) -> usize {
        self.shape[1] * self.shape[2] * self.shape[3]
    }

    pub fn sample(&self, n: usize) -> &[T] {
        let l = self.sample_len();
        &self.data[n * l..(n + 1) * l]
    }

    pub fn sample_mut(&mut self, n: usize) -> &mut [T] {
        let l = self.sample_len();
        &mut self.data[n * l..(n + 1) * l]
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Self) {
        assert_eq!(self.shape, other.shape);
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}

/// A named weight or state tensor. Non-trainable entries (batch-norm running
/// statistics) are serialized but never receive gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<T>,
    pub trainable: bool,
    pub(crate) id: usize,
}

impl<T: Real> Param<T> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }
}

/// Hands out parameter ids in construction order.
pub struct ParamBuilder<'r, R> {
    next_id: usize,
    prefix: Vec<String>,
    pub rng: &'r mut R,
}

impl<'r, R: Rng> ParamBuilder<'r, R> {
    pub fn new(rng: &'r mut R) -> Self {
        Self {
            next_id: 0,
            prefix: Vec::new(),
            rng,
        }
    }

    pub fn scoped<U>(&mut self, name: &str, f: impl FnOnce(&mut Self) -> U) -> U {
        self.prefix.push(name.to_string());
        let out = f(self);
        self.prefix.pop();
        out
    }

    fn make<T: Real>(&mut self, name: &str, shape: &[usize], value: Vec<T>, trainable: bool) -> Param<T> {
        let mut full = self.prefix.join(".");
        if !full.is_empty() {
            full.push('.');
        }
        full.push_str(name);
        let id = self.next_id;
        self.next_id += 1;
        Param {
            name: full,
            shape: shape.to_vec(),
            value,
            trainable,
            id,
        }
    }

    pub fn normal<T: Real>(&mut self, name: &str, shape: &[usize], std: f64) -> Param<T> {
        let n: usize = shape.iter().product();
        let value = (0..n)
            .map(|_| T::lit(self.rng.sample::<f64, _>(StandardNormal) * std))
            .collect();
        self.make(name, shape, value, true)
    }

    pub fn constant<T: Real>(&mut self, name: &str, shape: &[usize], v: f64) -> Param<T> {
        let n: usize = shape.iter().product();
        self.make(name, shape, vec![T::lit(v); n], true)
    }

    pub fn buffer<T: Real>(&mut self, name: &str, shape: &[usize], v: f64) -> Param<T> {
        let n: usize = shape.iter().product();
        self.make(name, shape, vec![T::lit(v); n], false)
    }

    pub fn count(&self) -> usize {
        self.next_id
    }
}

/// Anything that owns parameters.
pub trait Module<T: Real> {
    fn visit<'a>(&'a self, f: &mut dyn FnMut(&'a Param<T>));
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>));

    fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |p| {
            if p.trainable {
                n += p.len()
            }
        });
        n
    }
}

/// Gradient accumulators indexed by parameter id.
#[derive(Debug, Clone, PartialEq)]
pub struct Grads<T> {
    pub slots: Vec<Vec<T>>,
}

impl<T: Real> Grads<T> {
    pub fn zeros_like(module: &impl Module<T>) -> Self {
        let mut slots: Vec<Vec<T>> = Vec::new();
        module.visit(&mut |p| {
            if slots.len() <= p.id {
                slots.resize(p.id + 1, Vec::new());
            }
            slots[p.id] = vec![T::zero(); if p.trainable { p.len() } else { 0 }];
        });
        Self { slots }
    }

    pub fn slot(&mut self, p: &Param<T>) -> &mut [T] {
        &mut self.slots[p.id]
    }

    pub fn get(&self, p: &Param<T>) -> &[T] {
        &self.slots[p.id]
    }

    pub fn norm(&self) -> f64 {
        self.slots
            .iter()
            .flatten()
            .map(|v| v.as_f64() * v.as_f64())
            .sum::<f64>()
            .sqrt()
    }
}
