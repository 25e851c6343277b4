//! Dense row-major tensors of rank 1 to 4.
//!
//! Shapes are read as `batch x channel x height x width` where that matters.
//! Only scalar-with-tensor broadcasting is supported.

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::Float;

use crate::error::{Error, Result};

/// Floating-point element type. `f32` is the working precision, `f64` is used
/// wherever finite differences need a low noise floor.
pub trait Real: Float + Default + Debug + Send + Sync + AddAssign + SubAssign + MulAssign + Sum + 'static {
    fn of(v: f64) -> Self;
    fn f64(self) -> f64;
}

impl Real for f32 {
    #[inline]
    fn of(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    #[inline]
    fn of(v: f64) -> Self {
        v
    }
    #[inline]
    fn f64(self) -> f64 {
        self
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T = f32> {
    shape: Vec<usize>,
    data: Vec<T>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
}

fn check_shape(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() || shape.len() > 4 || shape.contains(&0) {
        return Err(Error::InvalidShape(shape.to_vec()));
    }
    Ok(shape.iter().product())
}

impl<T: Real> Tensor<T> {
    pub fn new(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let expected = check_shape(shape)?;
        if expected != data.len() {
            return Err(Error::LengthMismatch {
                shape: shape.to_vec(),
                expected,
                actual: data.len(),
            });
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn from_f64(shape: &[usize], data: &[f64]) -> Result<Self> {
        Self::new(shape, data.iter().map(|&v| T::of(v)).collect())
    }

    pub fn full(shape: &[usize], value: T) -> Result<Self> {
        let n = check_shape(shape)?;
        Ok(Tensor {
            shape: shape.to_vec(),
            data: vec![value; n],
        })
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: &[usize]) -> Result<Self> {
        Self::full(shape, T::one())
    }

    pub fn scalar(value: T) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
        }
    }

    /// Zero tensor with the same shape as `self`.
    pub fn zeros_like(&self) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: vec![T::zero(); self.data.len()],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
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

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Shape left-padded with ones to four extents.
    pub fn dims4(&self) -> [usize; 4] {
        let mut d = [1; 4];
        let off = 4 - self.shape.len();
        d[off..].copy_from_slice(&self.shape);
        d
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let n = check_shape(shape)?;
        if n != self.data.len() {
            return Err(Error::shape("reshape", &self.shape, shape));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, op: &'static str, f: impl Fn(T, T) -> T) -> Result<Self> {
        if self.shape != other.shape {
            return Err(Error::shape(op, &self.shape, &other.shape));
        }
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::of(v.f64())).collect(),
        }
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        elementwise(BinaryOp::Add, self, other)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        elementwise(BinaryOp::Sub, self, other)
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        elementwise(BinaryOp::Mul, self, other)
    }

    pub fn scale(&self, c: T) -> Self {
        self.map(|v| v * c)
    }

    /// In-place `self += other`.
    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::shape("add_assign", &self.shape, &other.shape));
        }
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    /// In-place `self += c * other`.
    pub fn axpy(&mut self, c: T, other: &Self) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::shape("axpy", &self.shape, &other.shape));
        }
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += c * b;
        }
        Ok(())
    }

    pub fn fill(&mut self, value: T) {
        self.data.iter_mut().for_each(|v| *v = value);
    }

    /// Row-major sum over every element.
    pub fn sum(&self) -> T {
        let mut acc = T::zero();
        for &v in &self.data {
            acc += v;
        }
        acc
    }

    pub fn mean(&self) -> T {
        reduce_mean(self)
    }

    pub fn dot(&self, other: &Self) -> Result<T> {
        if self.shape != other.shape {
            return Err(Error::shape("dot", &self.shape, &other.shape));
        }
        let mut acc = T::zero();
        for (&a, &b) in self.data.iter().zip(&other.data) {
            acc += a * b;
        }
        Ok(acc)
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Copy of batch item `n` with the leading extent set to 1.
    pub fn batch_item(&self, n: usize) -> Result<Self> {
        let b = self.shape[0];
        if n >= b {
            return Err(Error::OutOfRange {
                op: "batch_item",
                index: n,
                limit: b,
            });
        }
        let step = self.data.len() / b;
        let mut shape = self.shape.clone();
        shape[0] = 1;
        Ok(Tensor {
            shape,
            data: self.data[n * step..(n + 1) * step].to_vec(),
        })
    }

    /// Concatenate along the leading extent. All trailing extents must agree.
    pub fn stack(items: &[Self]) -> Result<Self> {
        let first = items.first().ok_or_else(|| Error::invalid("stack: empty input"))?;
        let tail = &first.shape[1..];
        let mut lead = 0;
        let mut data = Vec::new();
        for t in items {
            if &t.shape[1..] != tail {
                return Err(Error::shape("stack", &first.shape, &t.shape));
            }
            lead += t.shape[0];
            data.extend_from_slice(&t.data);
        }
        let mut shape = first.shape.clone();
        shape[0] = lead;
        Tensor::new(&shape, data)
    }

    /// Concatenate along axis 1. Every other extent must agree.
    pub fn concat_axis1(items: &[&Self]) -> Result<Self> {
        let first = items.first().ok_or_else(|| Error::invalid("concat: empty input"))?;
        if first.rank() < 2 {
            return Err(Error::InvalidAxis {
                op: "concat",
                axis: 1,
                rank: first.rank(),
            });
        }
        let b = first.shape[0];
        let inner: usize = first.shape[2..].iter().product();
        let mut width = 0;
        for t in items {
            if t.rank() != first.rank() || t.shape[0] != b || t.shape[2..] != first.shape[2..] {
                return Err(Error::shape("concat", &first.shape, &t.shape));
            }
            width += t.shape[1];
        }
        let mut data = Vec::with_capacity(b * width * inner);
        for n in 0..b {
            for t in items {
                let step = t.shape[1] * inner;
                data.extend_from_slice(&t.data[n * step..(n + 1) * step]);
            }
        }
        let mut shape = first.shape.clone();
        shape[1] = width;
        Tensor::new(&shape, data)
    }

    /// Inverse of [`Tensor::concat_axis1`]: split axis 1 into the given widths.
    pub fn split_axis1(&self, widths: &[usize]) -> Result<Vec<Self>> {
        if self.rank() < 2 || widths.iter().sum::<usize>() != self.shape[1] {
            return Err(Error::invalid(format!(
                "cannot split {:?} into widths {widths:?}",
                self.shape
            )));
        }
        let b = self.shape[0];
        let inner: usize = self.shape[2..].iter().product();
        let row = self.shape[1] * inner;
        let mut out = Vec::with_capacity(widths.len());
        let mut off = 0;
        for &w in widths {
            let mut data = Vec::with_capacity(b * w * inner);
            for n in 0..b {
                let start = n * row + off * inner;
                data.extend_from_slice(&self.data[start..start + w * inner]);
            }
            let mut shape = self.shape.clone();
            shape[1] = w;
            out.push(Tensor::new(&shape, data)?);
            off += w;
        }
        Ok(out)
    }
}

/// Apply a binary op elementwise. `b` may be a one-element tensor, which is
/// broadcast against every element of `a`.
pub fn elementwise<T: Real>(op: BinaryOp, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let f = |x: T, y: T| match op {
        BinaryOp::Add => x + y,
        BinaryOp::Sub => x - y,
        BinaryOp::Mul => x * y,
    };
    if b.len() == 1 && a.shape != b.shape {
        let s = b.data[0];
        return Ok(a.map(|x| f(x, s)));
    }
    a.zip_map(b, "elementwise", f)
}

/// Sum over the listed axes, which are removed from the result. Reducing all
/// axes yields a one-element tensor of shape `[1]`.
pub fn reduce_sum<T: Real>(a: &Tensor<T>, axes: &[usize]) -> Result<Tensor<T>> {
    let rank = a.rank();
    let mut reduce = [false; 4];
    for &ax in axes {
        if ax >= rank {
            return Err(Error::InvalidAxis {
                op: "reduce_sum",
                axis: ax,
                rank,
            });
        }
        reduce[ax] = true;
    }
    let out_shape: Vec<usize> = a
        .shape
        .iter()
        .enumerate()
        .filter(|(i, _)| !reduce[*i])
        .map(|(_, &e)| e)
        .collect();
    if out_shape.is_empty() {
        return Ok(Tensor::scalar(a.sum()));
    }
    let mut strides = vec![0usize; rank];
    let mut s = 1;
    for i in (0..rank).rev() {
        if !reduce[i] {
            strides[i] = s;
            s *= a.shape[i];
        }
    }
    let mut out = vec![T::zero(); s];
    let mut idx = vec![0usize; rank];
    for &v in &a.data {
        let o: usize = idx.iter().zip(&strides).map(|(i, st)| i * st).sum();
        out[o] += v;
        for d in (0..rank).rev() {
            idx[d] += 1;
            if idx[d] < a.shape[d] {
                break;
            }
            idx[d] = 0;
        }
    }
    Tensor::new(&out_shape, out)
}

pub fn reduce_mean<T: Real>(a: &Tensor<T>) -> T {
    a.sum() / T::of(a.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape, v).unwrap()
    }

    #[test]
    fn add_two_vectors() {
        let out = t(&[2], &[1.0, 2.0]).add(&t(&[2], &[3.0, 4.0])).unwrap();
        assert_eq!(out.data(), &[4.0, 6.0]);
    }

    #[test]
    fn mul_by_zeros_and_self_sub() {
        let x = t(&[2, 2], &[1.5, -2.0, 3.25, 1e30]);
        let z = x.zeros_like();
        assert!(x.mul(&z).unwrap().data().iter().all(|&v| v == 0.0));
        assert!(x.sub(&x).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn scalar_broadcast() {
        let out = elementwise(BinaryOp::Mul, &t(&[3], &[1.0, 2.0, 3.0]), &Tensor::scalar(2.0)).unwrap();
        assert_eq!(out.data(), &[2.0, 4.0, 6.0]);
    }

    #[test]
    fn shape_mismatch_names_both_shapes() {
        let err = t(&[2], &[1.0, 2.0]).add(&t(&[3], &[1.0, 2.0, 3.0])).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2]") && msg.contains("[3]"), "{msg}");
    }

    #[test]
    fn invalid_shapes_rejected() {
        assert!(Tensor::<f32>::zeros(&[0, 2]).is_err());
        assert!(Tensor::<f32>::zeros(&[1, 1, 1, 1, 1]).is_err());
        assert!(Tensor::<f32>::new(&[2, 2], vec![0.0; 3]).is_err());
    }

    #[test]
    fn reductions() {
        assert_eq!(reduce_mean(&t(&[4], &[1.0, 2.0, 3.0, 4.0])), 2.5);
        let ones = Tensor::<f64>::ones(&[2, 3]).unwrap();
        assert_eq!(reduce_sum(&ones, &[0, 1]).unwrap().data(), &[6.0]);
        let m = t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(reduce_sum(&m, &[0]).unwrap().data(), &[4.0, 6.0]);
        assert_eq!(reduce_sum(&m, &[1]).unwrap().data(), &[3.0, 7.0]);
        assert!(matches!(reduce_sum(&m, &[2]), Err(Error::InvalidAxis { .. })));
    }

    #[test]
    fn reduce_middle_axis() {
        let x = t(&[2, 3, 2], &(0..12).map(f64::from).collect::<Vec<_>>());
        let r = reduce_sum(&x, &[1]).unwrap();
        assert_eq!(r.shape(), &[2, 2]);
        assert_eq!(r.data(), &[6.0, 9.0, 24.0, 27.0]);
    }

    #[test]
    fn concat_split_round_trip() {
        let a = t(&[2, 1, 2], &[1.0, 2.0, 3.0, 4.0]);
        let b = t(&[2, 2, 2], &[5.0, 6.0, 7.0, 8.0, 9.0, 10.0, 11.0, 12.0]);
        let c = Tensor::concat_axis1(&[&a, &b]).unwrap();
        assert_eq!(c.shape(), &[2, 3, 2]);
        assert_eq!(&c.data()[..6], &[1.0, 2.0, 5.0, 6.0, 7.0, 8.0]);
        let parts = c.split_axis1(&[1, 2]).unwrap();
        assert_eq!(parts, vec![a, b]);
        assert!(c.split_axis1(&[1, 1]).is_err());
    }

    #[test]
    fn ops_leave_inputs_untouched() {
        let a = t(&[3], &[1.0, 2.0, 3.0]);
        let b = t(&[3], &[4.0, 5.0, 6.0]);
        let (a0, b0) = (a.clone(), b.clone());
        let _ = a.add(&b).unwrap();
        let _ = a.mul(&b).unwrap();
        let _ = reduce_sum(&a, &[0]).unwrap();
        assert_eq!(a, a0);
        assert_eq!(b, b0);
    }
}
