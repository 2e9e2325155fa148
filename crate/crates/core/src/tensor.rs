//! Dense rank-4 tensors in `(batch, channel, height, width)` layout.

use std::fmt;
use std::ops::{AddAssign, MulAssign, SubAssign};

use serde::{Deserialize, Serialize};

use crate::error::NnError;

/// Floating-point element type used by tensors and networks.
pub trait Real:
    Copy
    + Default
    + PartialOrd
    + fmt::Debug
    + fmt::Display
    + Send
    + Sync
    + 'static
    + std::ops::Add<Output = Self>
    + std::ops::Sub<Output = Self>
    + std::ops::Mul<Output = Self>
    + std::ops::Div<Output = Self>
    + std::ops::Neg<Output = Self>
    + AddAssign
    + SubAssign
    + MulAssign
    + std::iter::Sum
{
    const ZERO: Self;
    const ONE: Self;
    const NAME: &'static str;

    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn is_finite(self) -> bool;

    fn max(self, other: Self) -> Self {
        if other > self {
            other
        } else {
            self
        }
    }
}

impl Real for f32 {
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;
    const NAME: &'static str = "f32";

    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
    fn exp(self) -> Self {
        f32::exp(self)
    }
    fn ln(self) -> Self {
        f32::ln(self)
    }
    fn is_finite(self) -> bool {
        f32::is_finite(self)
    }
}

impl Real for f64 {
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;
    const NAME: &'static str = "f64";

    fn from_f64(v: f64) -> Self {
        v
    }
    fn to_f64(self) -> f64 {
        self
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn ln(self) -> Self {
        f64::ln(self)
    }
    fn is_finite(self) -> bool {
        f64::is_finite(self)
    }
}

/// Arithmetic precision selectable at run time.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

/// Shape of a rank-4 tensor.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
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

    pub const fn len(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Elements in one `(h, w)` plane.
    pub const fn plane(&self) -> usize {
        self.h * self.w
    }

    pub fn as_array(&self) -> [usize; 4] {
        [self.n, self.c, self.h, self.w]
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {}, {})", self.n, self.c, self.h, self.w)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<R: Real> {
    shape: Shape,
    data: Vec<R>,
}

impl<R: Real> Tensor<R> {
    pub fn zeros(shape: Shape) -> Self {
        Self {
            shape,
            data: vec![R::ZERO; shape.len()],
        }
    }

    pub fn filled(shape: Shape, value: R) -> Self {
        Self {
            shape,
            data: vec![value; shape.len()],
        }
    }

    pub fn from_vec(shape: Shape, data: Vec<R>) -> Result<Self, NnError> {
        if data.len() != shape.len() {
            return Err(NnError::DataLength {
                shape,
                len: data.len(),
            });
        }
        Ok(Self { shape, data })
    }

    /// Builds a tensor by evaluating `f(n, c, i, j)` at every index.
    pub fn from_fn(shape: Shape, mut f: impl FnMut(usize, usize, usize, usize) -> R) -> Self {
        let mut data = Vec::with_capacity(shape.len());
        for n in 0..shape.n {
            for c in 0..shape.c {
                for i in 0..shape.h {
                    for j in 0..shape.w {
                        data.push(f(n, c, i, j));
                    }
                }
            }
        }
        Self { shape, data }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn data(&self) -> &[R] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [R] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<R> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn index(&self, n: usize, c: usize, i: usize, j: usize) -> usize {
        debug_assert!(n < self.shape.n && c < self.shape.c && i < self.shape.h && j < self.shape.w);
        ((n * self.shape.c + c) * self.shape.h + i) * self.shape.w + j
    }

    #[inline]
    pub fn get(&self, n: usize, c: usize, i: usize, j: usize) -> R {
        self.data[self.index(n, c, i, j)]
    }

    #[inline]
    pub fn set(&mut self, n: usize, c: usize, i: usize, j: usize, v: R) {
        let idx = self.index(n, c, i, j);
        self.data[idx] = v;
    }

    /// The `(h, w)` plane of sample `n`, channel `c`.
    pub fn plane(&self, n: usize, c: usize) -> &[R] {
        let p = self.shape.plane();
        let start = (n * self.shape.c + c) * p;
        &self.data[start..start + p]
    }

    pub fn plane_mut(&mut self, n: usize, c: usize) -> &mut [R] {
        let p = self.shape.plane();
        let start = (n * self.shape.c + c) * p;
        &mut self.data[start..start + p]
    }

    /// Same data viewed under a new shape with the same element count.
    pub fn reshape(self, shape: Shape) -> Result<Self, NnError> {
        Self::from_vec(shape, self.data)
    }

    pub fn map(&self, f: impl Fn(R) -> R) -> Self {
        Self {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn add(&self, other: &Self) -> Result<Self, NnError> {
        self.ensure_same_shape(other)?;
        Ok(Self {
            shape: self.shape,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| a + b)
                .collect(),
        })
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<(), NnError> {
        self.ensure_same_shape(other)?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn scale(&self, s: R) -> Self {
        self.map(|v| v * s)
    }

    pub fn sum(&self) -> R {
        self.data.iter().copied().sum()
    }

    /// Dot product of the flattened data, accumulated in `f64`.
    pub fn dot(&self, other: &Self) -> Result<f64, NnError> {
        self.ensure_same_shape(other)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a.to_f64() * b.to_f64())
            .sum())
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Extracts sample `n` as a batch-of-one tensor.
    pub fn sample(&self, n: usize) -> Self {
        let per = self.shape.c * self.shape.plane();
        Self {
            shape: Shape::new(1, self.shape.c, self.shape.h, self.shape.w),
            data: self.data[n * per..(n + 1) * per].to_vec(),
        }
    }

    /// Concatenates batch-of-one or larger tensors along the batch axis.
    pub fn stack(parts: &[Self]) -> Result<Self, NnError> {
        let first = parts.first().ok_or(NnError::EmptyBatch)?;
        let mut data = Vec::new();
        let mut n = 0;
        for p in parts {
            let s = p.shape;
            if (s.c, s.h, s.w) != (first.shape.c, first.shape.h, first.shape.w) {
                return Err(NnError::ShapeMismatch {
                    what: "stack",
                    expected: first.shape,
                    actual: s,
                });
            }
            n += s.n;
            data.extend_from_slice(&p.data);
        }
        Ok(Self {
            shape: Shape::new(n, first.shape.c, first.shape.h, first.shape.w),
            data,
        })
    }

    pub fn convert<S: Real>(&self) -> Tensor<S> {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|v| S::from_f64(v.to_f64())).collect(),
        }
    }

    /// Crops the spatial window `[top, top+h) x [left, left+w)`.
    pub fn crop(&self, top: usize, left: usize, h: usize, w: usize) -> Result<Self, NnError> {
        if top + h > self.shape.h || left + w > self.shape.w {
            return Err(NnError::ShapeMismatch {
                what: "crop window",
                expected: self.shape,
                actual: Shape::new(self.shape.n, self.shape.c, top + h, left + w),
            });
        }
        Ok(Self::from_fn(
            Shape::new(self.shape.n, self.shape.c, h, w),
            |n, c, i, j| self.get(n, c, top + i, left + j),
        ))
    }

    /// Zero-pads spatially to `(h, w)`, placing the original at `(top, left)`.
    pub fn pad(&self, top: usize, left: usize, h: usize, w: usize) -> Result<Self, NnError> {
        if top + self.shape.h > h || left + self.shape.w > w {
            return Err(NnError::ShapeMismatch {
                what: "pad target",
                expected: Shape::new(self.shape.n, self.shape.c, h, w),
                actual: self.shape,
            });
        }
        let mut out = Self::zeros(Shape::new(self.shape.n, self.shape.c, h, w));
        for n in 0..self.shape.n {
            for c in 0..self.shape.c {
                for i in 0..self.shape.h {
                    for j in 0..self.shape.w {
                        out.set(n, c, top + i, left + j, self.get(n, c, i, j));
                    }
                }
            }
        }
        Ok(out)
    }

    pub(crate) fn ensure_same_shape(&self, other: &Self) -> Result<(), NnError> {
        if self.shape != other.shape {
            return Err(NnError::ShapeMismatch {
                what: "elementwise operands",
                expected: self.shape,
                actual: other.shape,
            });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_checks_length() {
        let err = Tensor::<f64>::from_vec(Shape::new(1, 1, 2, 2), vec![0.0; 3]).unwrap_err();
        assert!(matches!(err, NnError::DataLength { len: 3, .. }));
    }

    #[test]
    fn indexing_is_row_major_width_fastest() {
        let t = Tensor::<f64>::from_fn(Shape::new(2, 3, 4, 5), |n, c, i, j| {
            (n * 1000 + c * 100 + i * 10 + j) as f64
        });
        assert_eq!(t.data()[1], 1.0);
        assert_eq!(t.data()[5], 10.0);
        assert_eq!(t.get(1, 2, 3, 4), 1234.0);
        assert_eq!(t.plane(1, 2)[0], 1200.0);
    }

    #[test]
    fn crop_then_pad_restores_window() {
        let t = Tensor::<f64>::from_fn(Shape::new(1, 2, 6, 6), |_, c, i, j| (c * 36 + i * 6 + j) as f64);
        let c = t.crop(1, 2, 3, 3).unwrap();
        assert_eq!(c.get(0, 1, 0, 0), t.get(0, 1, 1, 2));
        let p = c.pad(1, 2, 6, 6).unwrap();
        assert_eq!(p.get(0, 1, 3, 4), t.get(0, 1, 3, 4));
        assert_eq!(p.get(0, 0, 0, 0), 0.0);
    }

    #[test]
    fn stack_and_sample_are_inverse() {
        let a = Tensor::<f32>::filled(Shape::new(1, 2, 2, 2), 1.0);
        let b = Tensor::<f32>::filled(Shape::new(1, 2, 2, 2), 2.0);
        let s = Tensor::stack(&[a.clone(), b.clone()]).unwrap();
        assert_eq!(s.shape(), Shape::new(2, 2, 2, 2));
        assert_eq!(s.sample(0), a);
        assert_eq!(s.sample(1), b);
    }
}
