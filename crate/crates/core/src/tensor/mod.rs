//! Dense NCHW tensors and the differentiable operators the network is built from.
//!
//! Every operator comes as a forward/backward pair of free functions. Backward
//! passes are wired by hand in graph order by the layers in [`crate::model`];
//! there is no tape.

mod activation;
mod batchnorm;
mod concat;
mod conv;
pub mod gradcheck;
mod param;
mod upsample;

use std::fmt;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

pub use activation::{relu, relu_backward, sigmoid, sigmoid_backward, sigmoid_scalar};
pub use batchnorm::{
    batchnorm_backward, batchnorm_forward, BatchNormCache, BatchNormState, BnMode, BN_EPSILON,
    BN_MOMENTUM,
};
pub use concat::{concat_channels, split_channels};
pub use conv::{conv2d_backward, conv2d_forward, same_padding, ConvSpec};
pub use param::{ParamRole, Parameter};
pub use upsample::{upsample2x, upsample2x_backward, Resample};

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("tensor shape {shape} needs {expected} values, got {got}")]
    DataLength {
        shape: Shape,
        expected: usize,
        got: usize,
    },
    #[error("shape extents must all be >= 1, got {0}")]
    EmptyShape(Shape),
    #[error("input has {got} channels but the convolution expects {expected}")]
    ChannelMismatch { expected: usize, got: usize },
    #[error("shape mismatch: {left} vs {right}")]
    ShapeMismatch { left: Shape, right: Shape },
    #[error("invalid convolution spec: {0}")]
    InvalidSpec(String),
    #[error("backward for {0} called without a cached forward pass")]
    MissingCache(&'static str),
    #[error("concat needs at least one input")]
    EmptyConcat,
}

/// Extents of a 4-D tensor in (batch, channels, height, width) order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Shape {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub const fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Self { n, c, h, w }
    }

    pub const fn numel(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    pub const fn plane(&self) -> usize {
        self.h * self.w
    }

    pub fn with_channels(self, c: usize) -> Self {
        Self { c, ..self }
    }

    fn check(&self) -> Result<(), TensorError> {
        if self.n == 0 || self.c == 0 || self.h == 0 || self.w == 0 {
            return Err(TensorError::EmptyShape(*self));
        }
        Ok(())
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {}, {})", self.n, self.c, self.h, self.w)
    }
}

/// Contiguous row-major N,C,H,W array of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Shape,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: Shape) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: Shape, value: f64) -> Self {
        assert!(shape.numel() > 0, "empty tensor shape {shape}");
        Self {
            shape,
            data: vec![value; shape.numel()],
        }
    }

    pub fn from_vec(shape: Shape, data: Vec<f64>) -> Result<Self, TensorError> {
        shape.check()?;
        if data.len() != shape.numel() {
            return Err(TensorError::DataLength {
                shape,
                expected: shape.numel(),
                got: data.len(),
            });
        }
        Ok(Self { shape, data })
    }

    /// Samples i.i.d. from N(0, std²).
    pub fn randn<R: Rng + ?Sized>(shape: Shape, std: f64, rng: &mut R) -> Self {
        let data = (0..shape.numel())
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                z * std
            })
            .collect();
        Self { shape, data }
    }

    /// Samples i.i.d. from U(lo, hi).
    pub fn uniform<R: Rng + ?Sized>(shape: Shape, lo: f64, hi: f64, rng: &mut R) -> Self {
        let data = (0..shape.numel()).map(|_| rng.random_range(lo..hi)).collect();
        Self { shape, data }
    }

    pub fn shape(&self) -> Shape {
        self.shape
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

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn offset(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        ((n * self.shape.c + c) * self.shape.h + y) * self.shape.w + x
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> f64 {
        self.data[self.offset(n, c, y, x)]
    }

    #[inline]
    pub fn set(&mut self, n: usize, c: usize, y: usize, x: usize, v: f64) {
        let i = self.offset(n, c, y, x);
        self.data[i] = v;
    }

    /// The H×W plane of sample `n`, channel `c`.
    pub fn plane(&self, n: usize, c: usize) -> &[f64] {
        let p = self.shape.plane();
        let start = (n * self.shape.c + c) * p;
        &self.data[start..start + p]
    }

    pub fn plane_mut(&mut self, n: usize, c: usize) -> &mut [f64] {
        let p = self.shape.plane();
        let start = (n * self.shape.c + c) * p;
        &mut self.data[start..start + p]
    }

    pub fn fill(&mut self, v: f64) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Tensor) -> Result<(), TensorError> {
        self.expect_shape(other.shape)?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn scale(&mut self, k: f64) {
        self.data.iter_mut().for_each(|x| *x *= k);
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn expect_shape(&self, shape: Shape) -> Result<(), TensorError> {
        if self.shape != shape {
            return Err(TensorError::ShapeMismatch {
                left: self.shape,
                right: shape,
            });
        }
        Ok(())
    }

    /// Sample `n` as its own 1×C×H×W tensor.
    pub fn sample(&self, n: usize) -> Tensor {
        let per = self.shape.c * self.shape.plane();
        Tensor {
            shape: Shape::new(1, self.shape.c, self.shape.h, self.shape.w),
            data: self.data[n * per..(n + 1) * per].to_vec(),
        }
    }

    /// Stacks 1×C×H×W tensors (or larger batches) along the batch axis.
    pub fn stack(items: &[Tensor]) -> Result<Tensor, TensorError> {
        let first = items.first().ok_or(TensorError::EmptyConcat)?.shape;
        let mut n = 0;
        let mut data = Vec::with_capacity(items.iter().map(Tensor::len).sum());
        for t in items {
            let s = t.shape;
            if (s.c, s.h, s.w) != (first.c, first.h, first.w) {
                return Err(TensorError::ShapeMismatch {
                    left: first,
                    right: s,
                });
            }
            n += s.n;
            data.extend_from_slice(&t.data);
        }
        Ok(Tensor {
            shape: Shape::new(n, first.c, first.h, first.w),
            data,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_checks_length() {
        let err = Tensor::from_vec(Shape::new(1, 1, 2, 2), vec![0.0; 3]).unwrap_err();
        assert!(matches!(err, TensorError::DataLength { expected: 4, got: 3, .. }));
        assert!(Tensor::from_vec(Shape::new(1, 0, 2, 2), vec![]).is_err());
    }

    #[test]
    fn offsets_are_row_major_nchw() {
        let t = Tensor::from_vec(Shape::new(2, 3, 4, 5), (0..120).map(f64::from).collect())
            .unwrap();
        assert_eq!(t.at(1, 2, 3, 4), 119.0);
        assert_eq!(t.at(0, 1, 0, 0), 20.0);
        assert_eq!(t.plane(1, 0)[0], 60.0);
    }

    #[test]
    fn stack_and_sample_invert() {
        let a = Tensor::full(Shape::new(1, 2, 3, 3), 1.0);
        let b = Tensor::full(Shape::new(1, 2, 3, 3), 2.0);
        let s = Tensor::stack(&[a.clone(), b.clone()]).unwrap();
        assert_eq!(s.shape(), Shape::new(2, 2, 3, 3));
        assert_eq!(s.sample(0), a);
        assert_eq!(s.sample(1), b);
    }
}
