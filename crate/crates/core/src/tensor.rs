//! Dense rank-4 `f64` tensors in row-major (batch, channel, height, width)
//! layout, plus the seeded counter-based generator used everywhere
//! randomness is needed.

use std::fmt;

use crate::error::{Error, Result};

/// (batch, channel, height, width).
pub type Shape = [usize; 4];

fn numel(shape: &Shape) -> usize {
    shape.iter().product()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ElementwiseOp {
    Add,
    Sub,
    Mul,
}

impl ElementwiseOp {
    #[inline]
    fn apply(self, a: f64, b: f64) -> f64 {
        match self {
            ElementwiseOp::Add => a + b,
            ElementwiseOp::Sub => a - b,
            ElementwiseOp::Mul => a * b,
        }
    }
}

/// Immutable-by-convention dense array. Every public constructor and
/// operation rejects NaN/Inf.
#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Shape,
    data: Vec<f64>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let preview: Vec<f64> = self.data.iter().take(8).copied().collect();
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("data", &preview)
            .finish()
    }
}

impl Tensor {
    pub fn new(shape: Shape, data: Vec<f64>) -> Result<Self> {
        if data.len() != numel(&shape) {
            return Err(Error::invalid(format!(
                "data length {} does not match shape {:?}",
                data.len(),
                shape
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("Tensor::new"));
        }
        Ok(Tensor { shape, data })
    }

    /// Caller guarantees length and finiteness. Used on hot paths whose
    /// inputs are already validated.
    pub(crate) fn from_raw(shape: Shape, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), numel(&shape));
        Tensor { shape, data }
    }

    pub fn zeros(shape: Shape) -> Self {
        Tensor::from_raw(shape, vec![0.0; numel(&shape)])
    }

    pub fn full(shape: Shape, value: f64) -> Result<Self> {
        if !value.is_finite() {
            return Err(Error::NonFinite("Tensor::full"));
        }
        Ok(Tensor::from_raw(shape, vec![value; numel(&shape)]))
    }

    pub fn from_fn(shape: Shape, mut f: impl FnMut(usize, usize, usize, usize) -> f64) -> Result<Self> {
        let [b, c, h, w] = shape;
        let mut data = Vec::with_capacity(numel(&shape));
        for bi in 0..b {
            for ci in 0..c {
                for yi in 0..h {
                    for xi in 0..w {
                        data.push(f(bi, ci, yi, xi));
                    }
                }
            }
        }
        Tensor::new(shape, data)
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn batch(&self) -> usize {
        self.shape[0]
    }

    pub fn channels(&self) -> usize {
        self.shape[1]
    }

    pub fn height(&self) -> usize {
        self.shape[2]
    }

    pub fn width(&self) -> usize {
        self.shape[3]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn index(&self, b: usize, c: usize, y: usize, x: usize) -> usize {
        let [_, cs, hs, ws] = self.shape;
        ((b * cs + c) * hs + y) * ws + x
    }

    #[inline]
    pub fn at(&self, b: usize, c: usize, y: usize, x: usize) -> f64 {
        self.data[self.index(b, c, y, x)]
    }

    /// Returns a copy with one element replaced.
    pub fn with_value(&self, flat_index: usize, value: f64) -> Result<Tensor> {
        if !value.is_finite() {
            return Err(Error::NonFinite("Tensor::with_value"));
        }
        let mut data = self.data.clone();
        data[flat_index] = value;
        Ok(Tensor::from_raw(self.shape, data))
    }

    pub fn reshape(self, shape: Shape) -> Result<Tensor> {
        if numel(&shape) != self.data.len() {
            return Err(Error::invalid(format!("cannot reshape {:?} into {:?}", self.shape, shape)));
        }
        Ok(Tensor::from_raw(shape, self.data))
    }

    fn check_same_shape(&self, other: &Tensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch { left: self.shape, right: other.shape });
        }
        Ok(())
    }

    pub fn elementwise(&self, other: &Tensor, op: ElementwiseOp) -> Result<Tensor> {
        self.check_same_shape(other)?;
        let data: Vec<f64> = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| op.apply(a, b))
            .collect();
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("elementwise"));
        }
        Ok(Tensor::from_raw(self.shape, data))
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.elementwise(other, ElementwiseOp::Add)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.elementwise(other, ElementwiseOp::Sub)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.elementwise(other, ElementwiseOp::Mul)
    }

    /// `self + k * other`
    pub fn add_scaled(&self, other: &Tensor, k: f64) -> Result<Tensor> {
        self.check_same_shape(other)?;
        let data: Vec<f64> = self.data.iter().zip(&other.data).map(|(&a, &b)| a + k * b).collect();
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("add_scaled"));
        }
        Ok(Tensor::from_raw(self.shape, data))
    }

    pub fn scale(&self, k: f64) -> Result<Tensor> {
        self.map(|v| v * k)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Tensor> {
        let data: Vec<f64> = self.data.iter().map(|&v| f(v)).collect();
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("map"));
        }
        Ok(Tensor::from_raw(self.shape, data))
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            0.0
        } else {
            self.sum() / self.data.len() as f64
        }
    }

    pub fn dot(&self, other: &Tensor) -> Result<f64> {
        self.check_same_shape(other)?;
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum())
    }

    pub fn l2_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn clamp(&self, lo: f64, hi: f64) -> Result<Tensor> {
        if lo.is_nan() || hi.is_nan() || lo > hi {
            return Err(Error::invalid(format!("clamp bounds lo={lo} > hi={hi}")));
        }
        Ok(Tensor::from_raw(self.shape, self.data.iter().map(|v| v.clamp(lo, hi)).collect()))
    }

    /// i.i.d. uniform samples in `[lo, hi)`.
    pub fn random_uniform(rng: &mut Rng, shape: Shape, lo: f64, hi: f64) -> Result<Tensor> {
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::invalid(format!("degenerate interval [{lo}, {hi})")));
        }
        let data = (0..numel(&shape)).map(|_| lo + (hi - lo) * rng.uniform()).collect();
        Ok(Tensor::from_raw(shape, data))
    }

    pub fn random_normal(rng: &mut Rng, shape: Shape, std: f64) -> Tensor {
        Tensor::from_raw(shape, (0..numel(&shape)).map(|_| std * rng.normal()).collect())
    }

    /// Extracts batch item `b` as a batch-of-one tensor.
    pub fn item(&self, b: usize) -> Tensor {
        let [_, c, h, w] = self.shape;
        let n = c * h * w;
        Tensor::from_raw([1, c, h, w], self.data[b * n..(b + 1) * n].to_vec())
    }

    /// Concatenates along the batch axis.
    pub fn stack(items: &[Tensor]) -> Result<Tensor> {
        let first = items.first().ok_or_else(|| Error::invalid("stack of zero tensors"))?;
        let [_, c, h, w] = first.shape;
        let mut data = Vec::with_capacity(items.iter().map(Tensor::len).sum());
        let mut batch = 0;
        for t in items {
            if t.shape[1..] != first.shape[1..] {
                return Err(Error::ShapeMismatch { left: first.shape, right: t.shape });
            }
            batch += t.shape[0];
            data.extend_from_slice(&t.data);
        }
        Ok(Tensor::from_raw([batch, c, h, w], data))
    }

    pub(crate) fn ensure_finite(&self, what: &'static str) -> Result<()> {
        if self.data.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite(what))
        }
    }
}

/// Counter-based generator: SplitMix64 evaluated at `seed + counter * GOLDEN`.
///
/// Output `k` (counting from 1) is `mix64(seed.wrapping_add(k.wrapping_mul(0x9E3779B97F4A7C15)))`
/// where `mix64` is the SplitMix64 finalizer
/// `z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9; z = (z ^ (z >> 27)) * 0x94D049BB133111EB; z ^ (z >> 31)`
/// with wrapping multiplication. Uniform doubles take the top 53 bits:
/// `(u >> 11) * 2^-53`. Normals use Box-Muller with the cosine branch only,
/// consuming two uniforms per sample (`u1` mapped to `1 - u1` to avoid `ln 0`).
#[derive(Clone, Debug)]
pub struct Rng {
    seed: u64,
    counter: u64,
}

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng { seed, counter: 0 }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent stream keyed by `(seed, stream)`.
    pub fn derive(seed: u64, stream: u64) -> Self {
        Rng::new(mix64(seed ^ mix64(stream.wrapping_add(GOLDEN))))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.counter = self.counter.wrapping_add(1);
        mix64(self.seed.wrapping_add(self.counter.wrapping_mul(GOLDEN)))
    }

    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn normal(&mut self) -> f64 {
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }

    /// Uniform integer in `0..n`.
    pub fn below(&mut self, n: usize) -> usize {
        ((self.uniform() * n as f64) as usize).min(n.saturating_sub(1))
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}
