//! Dense 4-D tensors with a gradient slot, plus the deterministic numeric
//! helpers every other module builds on.
//!
//! Layout is row-major `(n, c, h, w)` over 64-bit floats. All reductions run
//! left-to-right in index order so identical inputs produce bitwise-identical
//! results across runs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("extent product overflows usize for shape {0}")]
    Size(Shape),
    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: Shape, got: Shape },
    #[error("data length {len} does not match shape {shape} ({numel} elements)")]
    DataLength { shape: Shape, numel: usize, len: usize },
    #[error("invalid parameter: {0}")]
    Param(String),
    #[error("invalid state: {0}")]
    State(String),
}

/// Extents of a 4-D tensor in `(n, c, h, w)` order.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct Shape {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Shape { n, c, h, w }
    }

    pub fn numel(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    pub fn checked_numel(&self) -> Option<usize> {
        self.n
            .checked_mul(self.c)?
            .checked_mul(self.h)?
            .checked_mul(self.w)
    }

    /// Flat row-major offset of `(n, c, h, w)`.
    #[inline]
    pub fn index(&self, n: usize, c: usize, h: usize, w: usize) -> usize {
        debug_assert!(n < self.n && c < self.c && h < self.h && w < self.w);
        ((n * self.c + c) * self.h + h) * self.w + w
    }

    pub fn is_scalar(&self) -> bool {
        self.numel() == 1
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({}, {}, {}, {})", self.n, self.c, self.h, self.w)
    }
}

/// Dense 4-D array of `f64` with an optional same-shape gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Shape,
    data: Vec<f64>,
    grad: Option<Vec<f64>>,
}

impl Tensor {
    /// Allocates a tensor filled with `fill`. Fails if the extent product
    /// overflows the platform index type.
    pub fn new(shape: Shape, fill: f64) -> Result<Self, TensorError> {
        let numel = shape.checked_numel().ok_or(TensorError::Size(shape))?;
        Ok(Tensor {
            shape,
            data: vec![fill; numel],
            grad: None,
        })
    }

    pub fn zeros(shape: Shape) -> Result<Self, TensorError> {
        Tensor::new(shape, 0.0)
    }

    /// A `(1,1,1,1)` tensor holding one value.
    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: Shape::new(1, 1, 1, 1),
            data: vec![value],
            grad: None,
        }
    }

    pub fn from_vec(shape: Shape, data: Vec<f64>) -> Result<Self, TensorError> {
        let numel = shape.checked_numel().ok_or(TensorError::Size(shape))?;
        if data.len() != numel {
            return Err(TensorError::DataLength {
                shape,
                numel,
                len: data.len(),
            });
        }
        Ok(Tensor {
            shape,
            data,
            grad: None,
        })
    }

    /// Deterministic uniform draw in `[lo, hi)`; identical `(shape, lo, hi,
    /// seed)` always produce bitwise-identical tensors.
    pub fn seeded_uniform(shape: Shape, lo: f64, hi: f64, seed: u64) -> Result<Self, TensorError> {
        if !(lo < hi) {
            return Err(TensorError::Param(format!(
                "uniform range requires lo < hi, got [{lo}, {hi})"
            )));
        }
        let numel = shape.checked_numel().ok_or(TensorError::Size(shape))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let span = hi - lo;
        let data = (0..numel).map(|_| lo + rng.gen::<f64>() * span).collect();
        Ok(Tensor {
            shape,
            data,
            grad: None,
        })
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, h: usize, w: usize) -> f64 {
        self.data[self.shape.index(n, c, h, w)]
    }

    #[inline]
    pub fn set(&mut self, n: usize, c: usize, h: usize, w: usize, v: f64) {
        let i = self.shape.index(n, c, h, w);
        self.data[i] = v;
    }

    pub fn is_scalar(&self) -> bool {
        self.shape.is_scalar()
    }

    /// Value of a one-element tensor.
    pub fn item(&self) -> Result<f64, TensorError> {
        if !self.is_scalar() {
            return Err(TensorError::Param(format!(
                "item() on non-scalar tensor {}",
                self.shape
            )));
        }
        Ok(self.data[0])
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    pub fn grad_mut(&mut self) -> Option<&mut [f64]> {
        self.grad.as_deref_mut()
    }

    /// Adds `delta` into the gradient slot, allocating zeros on first use.
    pub fn accumulate_grad(&mut self, delta: &[f64]) -> Result<(), TensorError> {
        if delta.len() != self.data.len() {
            return Err(TensorError::DataLength {
                shape: self.shape,
                numel: self.data.len(),
                len: delta.len(),
            });
        }
        let grad = self.grad.get_or_insert_with(|| vec![0.0; delta.len()]);
        for (g, d) in grad.iter_mut().zip(delta) {
            *g += d;
        }
        Ok(())
    }

    /// Drops any accumulated gradient. Called by the optimizer, never
    /// implicitly.
    pub fn clear_grad(&mut self) {
        self.grad = None;
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Fixed left-to-right sum.
    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
            grad: None,
        }
    }

    pub fn scale(&self, c: f64) -> Tensor {
        self.map(|v| v * c)
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor, TensorError> {
        if self.shape != other.shape {
            return Err(TensorError::Shape {
                expected: self.shape,
                got: other.shape,
            });
        }
        Ok(Tensor {
            shape: self.shape,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a + b)
                .collect(),
            grad: None,
        })
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor, TensorError> {
        if self.shape != other.shape {
            return Err(TensorError::Shape {
                expected: self.shape,
                got: other.shape,
            });
        }
        Ok(Tensor {
            shape: self.shape,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a - b)
                .collect(),
            grad: None,
        })
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// One step of the splitmix64 sequence; used to derive independent stream
/// seeds from a root seed.
pub fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for sub-stream `stream` of the generator rooted at `root`.
pub fn derive_seed(root: u64, stream: u64) -> u64 {
    let mut s = root ^ stream.wrapping_mul(0xa076_1d64_78bd_642f);
    splitmix64(&mut s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_fills_zero() {
        let t = Tensor::new(Shape::new(1, 1, 2, 2), 0.0).unwrap();
        assert_eq!(t.data(), &[0.0, 0.0, 0.0, 0.0]);
        assert!(t.grad().is_none());
    }

    #[test]
    fn new_fills_value() {
        let t = Tensor::new(Shape::new(1, 1, 1, 1), 3.5).unwrap();
        assert_eq!(t.data(), &[3.5]);
    }

    #[test]
    fn degenerate_extent_gives_empty() {
        let t = Tensor::new(Shape::new(0, 1, 1, 1), 1.0).unwrap();
        assert_eq!(t.numel(), 0);
    }

    #[test]
    fn overflowing_extents_error() {
        let huge = Shape::new(usize::MAX, 2, 2, 2);
        assert!(matches!(Tensor::new(huge, 0.0), Err(TensorError::Size(_))));
    }

    #[test]
    fn seeded_uniform_is_deterministic() {
        let s = Shape::new(1, 1, 4, 4);
        let a = Tensor::seeded_uniform(s, -1.0, 1.0, 7).unwrap();
        let b = Tensor::seeded_uniform(s, -1.0, 1.0, 7).unwrap();
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn seeded_uniform_respects_range() {
        let t = Tensor::seeded_uniform(Shape::new(1, 1, 4, 4), -1.0, 1.0, 7).unwrap();
        assert!(t.data().iter().all(|&v| (-1.0..1.0).contains(&v)));
    }

    #[test]
    fn different_seeds_differ() {
        let s = Shape::new(1, 1, 4, 4);
        let a = Tensor::seeded_uniform(s, -1.0, 1.0, 1).unwrap();
        let b = Tensor::seeded_uniform(s, -1.0, 1.0, 2).unwrap();
        assert!(a.data().iter().zip(b.data()).any(|(x, y)| x != y));
    }

    #[test]
    fn bad_uniform_range_errors() {
        let s = Shape::new(1, 1, 2, 2);
        assert!(Tensor::seeded_uniform(s, 1.0, 1.0, 0).is_err());
        assert!(Tensor::seeded_uniform(s, 2.0, 1.0, 0).is_err());
    }

    #[test]
    fn grad_accumulates_additively() {
        let mut t = Tensor::zeros(Shape::new(1, 1, 1, 2)).unwrap();
        t.accumulate_grad(&[1.0, 2.0]).unwrap();
        t.accumulate_grad(&[0.5, 0.5]).unwrap();
        assert_eq!(t.grad().unwrap(), &[1.5, 2.5]);
        t.clear_grad();
        assert!(t.grad().is_none());
    }

    #[test]
    fn derive_seed_streams_are_distinct() {
        let a = derive_seed(42, 0);
        let b = derive_seed(42, 1);
        assert_ne!(a, b);
        assert_eq!(a, derive_seed(42, 0));
    }
}
