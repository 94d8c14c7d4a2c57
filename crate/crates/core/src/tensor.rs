//! Dense rank-4 tensors in `(batch, channel, height, width)` order.
//!
//! Matrices and vectors reuse the same type: an `(rows, cols)` matrix is a
//! `(rows, cols, 1, 1)` tensor and a per-channel vector of length `c` is
//! `(1, c, 1, 1)`.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::error::{Error, Result};
use crate::real::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Shape {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub const fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Shape { n, c, h, w }
    }

    /// `(rows, cols)` matrix stored as `(rows, cols, 1, 1)`.
    pub const fn matrix(rows: usize, cols: usize) -> Self {
        Shape::new(rows, cols, 1, 1)
    }

    pub const fn scalar() -> Self {
        Shape::new(1, 1, 1, 1)
    }

    pub const fn numel(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    /// Elements in one sample (`c * h * w`).
    pub const fn sample_len(&self) -> usize {
        self.c * self.h * self.w
    }

    pub const fn plane(&self) -> usize {
        self.h * self.w
    }

    #[inline]
    pub const fn index(&self, n: usize, c: usize, h: usize, w: usize) -> usize {
        ((n * self.c + c) * self.h + h) * self.w + w
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}x{}x{}x{})", self.n, self.c, self.h, self.w)
    }
}

/// Spatial padding mode of a convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    /// No padding: output side is `(side - k) / stride + 1`.
    Valid,
    /// Symmetric zero padding of `(k - 1) / 2`; output side is
    /// `ceil(side / stride)`. Requires odd `k`.
    Same,
}

impl Padding {
    pub fn amount(self, k: usize) -> usize {
        match self {
            Padding::Valid => 0,
            Padding::Same => (k - 1) / 2,
        }
    }

    /// Output side length, or `None` when the kernel does not fit.
    pub fn output_len(self, side: usize, k: usize, stride: usize) -> Option<usize> {
        let padded = side + 2 * self.amount(k);
        if padded < k || stride == 0 {
            return None;
        }
        Some((padded - k) / stride + 1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Shape,
    data: Vec<T>,
    grad: Option<Vec<T>>,
}

impl<T: Real> Tensor<T> {
    pub fn zeros(shape: Shape) -> Self {
        Tensor {
            shape,
            data: vec![T::zero(); shape.numel()],
            grad: None,
        }
    }

    pub fn full(shape: Shape, value: T) -> Self {
        Tensor {
            shape,
            data: vec![value; shape.numel()],
            grad: None,
        }
    }

    pub fn from_vec(shape: Shape, data: Vec<T>) -> Result<Self> {
        if data.len() != shape.numel() {
            return Err(Error::Contract(alloc::format!(
                "data length {} does not match shape {shape}",
                data.len()
            )));
        }
        Ok(Tensor {
            shape,
            data,
            grad: None,
        })
    }

    /// Per-channel vector of length `values.len()`, shape `(1, c, 1, 1)`.
    pub fn channel_vector(values: Vec<T>) -> Self {
        let shape = Shape::new(1, values.len(), 1, 1);
        Tensor {
            shape,
            data: values,
            grad: None,
        }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn grad(&self) -> Option<&[T]> {
        self.grad.as_deref()
    }

    pub fn grad_mut(&mut self) -> Option<&mut [T]> {
        self.grad.as_deref_mut()
    }

    pub fn set_grad(&mut self, grad: Vec<T>) -> Result<()> {
        if grad.len() != self.data.len() {
            return Err(Error::Contract(alloc::format!(
                "gradient length {} does not match shape {}",
                grad.len(),
                self.shape
            )));
        }
        self.grad = Some(grad);
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        match &mut self.grad {
            Some(g) => g.iter_mut().for_each(|v| *v = T::zero()),
            None => self.grad = Some(vec![T::zero(); self.data.len()]),
        }
    }

    pub fn clear_grad(&mut self) {
        self.grad = None;
    }

    pub fn get(&self, n: usize, c: usize, h: usize, w: usize) -> T {
        self.data[self.shape.index(n, c, h, w)]
    }

    pub fn set(&mut self, n: usize, c: usize, h: usize, w: usize, value: T) {
        let i = self.shape.index(n, c, h, w);
        self.data[i] = value;
    }

    /// Same data under a new shape with the same element count.
    pub fn reshape(mut self, shape: Shape) -> Result<Self> {
        if shape.numel() != self.shape.numel() {
            return Err(Error::Dimension {
                op: "reshape",
                lhs: self.shape,
                rhs: shape,
            });
        }
        self.shape = shape;
        Ok(self)
    }

    /// Sample `index` as a `(1, c, h, w)` tensor.
    pub fn sample(&self, index: usize) -> Tensor<T> {
        let len = self.shape.sample_len();
        let start = index * len;
        Tensor {
            shape: Shape::new(1, self.shape.c, self.shape.h, self.shape.w),
            data: self.data[start..start + len].to_vec(),
            grad: None,
        }
    }

    /// Stacks equally shaped single-sample tensors along the batch axis.
    pub fn stack(samples: &[&Tensor<T>]) -> Result<Tensor<T>> {
        let first = samples
            .first()
            .ok_or_else(|| Error::Contract("cannot stack an empty list".into()))?
            .shape;
        let mut data = Vec::with_capacity(first.numel() * samples.len());
        let mut n = 0;
        for s in samples {
            if (s.shape.c, s.shape.h, s.shape.w) != (first.c, first.h, first.w) {
                return Err(Error::Dimension {
                    op: "stack",
                    lhs: first,
                    rhs: s.shape,
                });
            }
            data.extend_from_slice(&s.data);
            n += s.shape.n;
        }
        Ok(Tensor {
            shape: Shape::new(n, first.c, first.h, first.w),
            data,
            grad: None,
        })
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Tensor<T> {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
            grad: None,
        }
    }

    /// Converts every element to another precision.
    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|v| U::from_f64(v.as_f64())).collect(),
            grad: self
                .grad
                .as_ref()
                .map(|g| g.iter().map(|v| U::from_f64(v.as_f64())).collect()),
        }
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn padding_output_sizes() {
        assert_eq!(Padding::Same.output_len(32, 3, 2), Some(16));
        assert_eq!(Padding::Same.output_len(5, 3, 2), Some(3));
        assert_eq!(Padding::Same.output_len(7, 3, 1), Some(7));
        assert_eq!(Padding::Valid.output_len(5, 3, 1), Some(3));
        assert_eq!(Padding::Valid.output_len(2, 3, 1), None);
    }

    #[test]
    fn from_vec_checks_length() {
        assert!(Tensor::<f32>::from_vec(Shape::new(1, 2, 2, 2), vec![0.0; 7]).is_err());
        let t = Tensor::<f32>::from_vec(Shape::new(1, 2, 2, 2), vec![0.0; 8]).unwrap();
        assert_eq!(t.data().len(), 8);
        assert!(t.grad().is_none());
    }

    #[test]
    fn grad_must_match_shape() {
        let mut t = Tensor::<f64>::zeros(Shape::new(1, 1, 2, 2));
        assert!(t.set_grad(vec![0.0; 3]).is_err());
        t.set_grad(vec![1.0; 4]).unwrap();
        assert_eq!(t.grad().unwrap(), &[1.0; 4]);
    }

    #[test]
    fn stack_and_sample_roundtrip() {
        let a = Tensor::<f32>::from_vec(Shape::new(1, 1, 1, 2), vec![1.0, 2.0]).unwrap();
        let b = Tensor::<f32>::from_vec(Shape::new(1, 1, 1, 2), vec![3.0, 4.0]).unwrap();
        let s = Tensor::stack(&[&a, &b]).unwrap();
        assert_eq!(s.shape(), Shape::new(2, 1, 1, 2));
        assert_eq!(s.sample(1), b);
    }
}
