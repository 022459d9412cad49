//! Dense tensors, the layer kernels built on them, and a small reverse-mode tape.
//!
//! Tensors are row-major with 4-D data laid out as `[batch, channels, height, width]`.
//! Everything is generic over [`Real`] so the same code runs in `f32` for training and
//! inference and in `f64` for finite-difference gradient checks.

mod gradcheck;
pub mod ops;
mod tape;

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

use crate::error::{Error, Result};

pub use gradcheck::{grad_check, GradCheckOptions, GradCheckReport};
pub use tape::{BackwardCtx, BackwardFn, Eager, Gradients, Graph, Tape, Var};

/// Floating-point element type usable by every kernel in the crate.
pub trait Real:
    Float + FromPrimitive + ToPrimitive + Sum + Debug + Display + Default + Send + Sync + 'static
{
    /// `c = alpha * a * b + beta * c` on raw strided matrices.
    ///
    /// # Safety
    /// Pointers and strides must describe matrices of the stated extents.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );
}

impl Real for f32 {
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f32,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }
}

impl Real for f64 {
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f64,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }
}

/// Lossless-enough literal conversion for constants in generic code.
#[inline]
pub fn lit<T: Real>(v: f64) -> T {
    T::from_f64(v).expect("finite literal")
}

#[derive(Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Debug> Debug for Tensor<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        const SHOWN: usize = 8;
        write!(f, "Tensor{:?} ", self.shape)?;
        if self.data.len() <= SHOWN {
            write!(f, "{:?}", self.data)
        } else {
            write!(f, "{:?}..", &self.data[..SHOWN])
        }
    }
}

impl<T: Real> Tensor<T> {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<T>) -> Result<Self> {
        let shape = shape.into();
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::shape(
                "tensor",
                format!("shape {shape:?} needs {expected} values, got {}", data.len()),
            ));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: T) -> Self {
        let shape = shape.into();
        let len = shape.iter().product();
        Self {
            shape,
            data: vec![value; len],
        }
    }

    pub fn from_fn(shape: impl Into<Vec<usize>>, mut f: impl FnMut(usize) -> T) -> Self {
        let shape = shape.into();
        let len: usize = shape.iter().product();
        Self {
            shape,
            data: (0..len).map(&mut f).collect(),
        }
    }

    pub fn scalar(value: T) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
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

    /// The single value of a one-element tensor.
    pub fn item(&self) -> Option<T> {
        (self.data.len() == 1).then(|| self.data[0])
    }

    /// Interprets the shape as `[n, c, h, w]`.
    pub fn dims4(&self) -> Result<(usize, usize, usize, usize)> {
        match self.shape[..] {
            [n, c, h, w] => Ok((n, c, h, w)),
            _ => Err(Error::shape(
                "dims4",
                format!("expected a 4-D tensor, got {:?}", self.shape),
            )),
        }
    }

    pub fn reshape(mut self, shape: impl Into<Vec<usize>>) -> Result<Self> {
        let shape = shape.into();
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(Error::shape(
                "reshape",
                format!("cannot view {:?} as {shape:?}", self.shape),
            ));
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        self.expect_same_shape(other, "zip_map")?;
        Ok(Self {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    /// `self += other`, elementwise.
    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        self.expect_same_shape(other, "add_assign")?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + b;
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: T) {
        for v in &mut self.data {
            *v = *v * factor;
        }
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn mean(&self) -> T {
        self.sum() / T::from_usize(self.data.len().max(1)).unwrap()
    }

    pub fn min_max(&self) -> (T, T) {
        self.data
            .iter()
            .fold((T::infinity(), T::neg_infinity()), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .map(|v| U::from_f64(v.to_f64().unwrap()).unwrap())
                .collect(),
        }
    }

    /// Largest absolute elementwise difference; `None` if shapes differ.
    pub fn max_abs_diff(&self, other: &Self) -> Option<T> {
        (self.shape == other.shape).then(|| {
            self.data
                .iter()
                .zip(&other.data)
                .fold(T::zero(), |m, (&a, &b)| m.max((a - b).abs()))
        })
    }

    pub(crate) fn expect_same_shape(&self, other: &Self, op: &'static str) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::shape(
                op,
                format!("{:?} vs {:?}", self.shape, other.shape),
            ));
        }
        Ok(())
    }

    /// Contiguous `[h, w]` plane for sample `n`, channel `c` of a 4-D tensor.
    pub fn plane(&self, n: usize, c: usize) -> &[T] {
        let (_, ch, h, w) = self.dims4().expect("4-D tensor");
        let hw = h * w;
        let start = (n * ch + c) * hw;
        &self.data[start..start + hw]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_rejects_bad_length() {
        assert!(Tensor::<f32>::new(vec![2, 3], vec![0.0; 5]).is_err());
        let t = Tensor::<f32>::new(vec![2, 3], vec![0.0; 6]).unwrap();
        assert_eq!(t.len(), 6);
    }

    #[test]
    fn cast_round_trip() {
        let t = Tensor::<f32>::from_fn(vec![4], |i| i as f32 * 0.25);
        let back: Tensor<f32> = t.cast::<f64>().cast();
        assert_eq!(t, back);
    }

    #[test]
    fn dims4_requires_rank_four() {
        assert!(Tensor::<f64>::zeros(vec![1, 2, 3]).dims4().is_err());
        assert_eq!(
            Tensor::<f64>::zeros(vec![1, 2, 3, 4]).dims4().unwrap(),
            (1, 2, 3, 4)
        );
    }
}
