//! Minimal dense tensor engine: NCHW kernels, a reverse-mode tape, an eager
//! evaluator sharing the same operator set, and the AdaMax optimizer.

mod adamax;
mod eval;
pub mod gradcheck;
pub(crate) mod kernels;
mod ops;
mod params;
mod sparse;
mod tape;

use std::fmt;

pub use adamax::{AdaMax, AdaMaxConfig, AdaMaxState};
pub use eval::Eval;
pub use kernels::{bilinear_resize, conv2d, Scale};
pub use ops::Ops;
pub use params::{ParamId, ParamStore};
pub use sparse::SparseMap;
pub use tape::{Tape, Var};

/// Errors raised by tensor construction and operators.
#[derive(Debug, thiserror::Error, PartialEq)]
pub enum TensorError {
    #[error("{op}: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("data length {actual} does not match shape {shape:?} ({expected} elements)")]
    Length { shape: Vec<usize>, expected: usize, actual: usize },
    #[error("backward requires a scalar loss, got {numel} elements")]
    NonScalarLoss { numel: usize },
    #[error("non-finite gradient in parameter {index}")]
    NonFiniteGradient { index: usize },
}

pub(crate) fn shape_err(op: &'static str, detail: impl Into<String>) -> TensorError {
    TensorError::Shape { op, detail: detail.into() }
}

/// Scalar type the engine computes in. `f32` for speed, `f64` for gradient checks.
pub trait Real:
    num_traits::Float
    + num_traits::FromPrimitive
    + Default
    + Send
    + Sync
    + fmt::Debug
    + fmt::Display
    + std::iter::Sum
    + std::ops::AddAssign
    + std::ops::SubAssign
    + std::ops::MulAssign
    + 'static
{
    fn of(x: f64) -> Self;
    fn as_f64(self) -> f64;

    /// `c = alpha * a * b + beta * c` with arbitrary strides.
    ///
    /// # Safety
    /// The pointers and strides must describe valid, non-aliasing (for `c`)
    /// matrices of the given sizes.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm(
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
    fn of(x: f64) -> Self {
        x as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
    unsafe fn gemm(
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
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

impl Real for f64 {
    fn of(x: f64) -> Self {
        x
    }
    fn as_f64(self) -> f64 {
        self
    }
    unsafe fn gemm(
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
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

/// Row-major n-dimensional array. 4-D tensors are laid out NCHW.
#[derive(Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: fmt::Debug> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("len", &self.data.len())
            .finish()
    }
}

impl<T: Real> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self, TensorError> {
        let expected = shape.iter().product::<usize>();
        if expected != data.len() {
            return Err(TensorError::Length { shape, expected, actual: data.len() });
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let n = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: vec![value; n] }
    }

    pub fn scalar(value: T) -> Self {
        Tensor { shape: vec![1], data: vec![value] }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> T) -> Self {
        let n = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: (0..n).map(&mut f).collect() }
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

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// Value of a one-element tensor.
    pub fn item(&self) -> T {
        self.data[0]
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self, TensorError> {
        let expected = shape.iter().product::<usize>();
        if expected != self.data.len() {
            return Err(TensorError::Length { shape, expected, actual: self.data.len() });
        }
        self.shape = shape;
        Ok(self)
    }

    /// `(n, c, h, w)` of a 4-D tensor.
    pub fn dims4(&self, op: &'static str) -> Result<(usize, usize, usize, usize), TensorError> {
        match self.shape[..] {
            [n, c, h, w] => Ok((n, c, h, w)),
            _ => Err(shape_err(op, format!("expected a 4-D NCHW tensor, got shape {:?}", self.shape))),
        }
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|v| U::of(v.as_f64())).collect() }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().map(|v| v.as_f64()).sum()
    }

    pub fn max_abs_diff(&self, other: &Tensor<T>) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a.as_f64() - b.as_f64()).abs())
            .fold(0.0, f64::max)
    }

    /// Channel-range slice `[c0, c1)` of an NCHW tensor.
    pub fn narrow_channels(&self, c0: usize, c1: usize) -> Result<Self, TensorError> {
        let (n, c, h, w) = self.dims4("narrow_channels")?;
        if c0 > c1 || c1 > c {
            return Err(shape_err("narrow_channels", format!("range {c0}..{c1} outside {c} channels")));
        }
        let plane = h * w;
        let mut data = Vec::with_capacity(n * (c1 - c0) * plane);
        for i in 0..n {
            data.extend_from_slice(&self.data[(i * c + c0) * plane..(i * c + c1) * plane]);
        }
        Ok(Tensor { shape: vec![n, c1 - c0, h, w], data })
    }

    /// Concatenates NCHW tensors with matching C, H, W along the batch axis.
    pub fn concat_batch(parts: &[&Tensor<T>]) -> Result<Self, TensorError> {
        let first = parts.first().ok_or_else(|| shape_err("concat_batch", "no inputs"))?;
        let (_, c, h, w) = first.dims4("concat_batch")?;
        let mut data = Vec::new();
        let mut n = 0;
        for p in parts {
            let (pn, pc, ph, pw) = p.dims4("concat_batch")?;
            if (pc, ph, pw) != (c, h, w) {
                return Err(shape_err(
                    "concat_batch",
                    format!("shape {:?} differs from {:?}", p.shape, first.shape),
                ));
            }
            n += pn;
            data.extend_from_slice(&p.data);
        }
        Ok(Tensor { shape: vec![n, c, h, w], data })
    }

    /// One batch element of an NCHW tensor, keeping a batch axis of 1.
    pub fn batch_item(&self, i: usize) -> Result<Self, TensorError> {
        let (n, c, h, w) = self.dims4("batch_item")?;
        if i >= n {
            return Err(shape_err("batch_item", format!("index {i} outside batch of {n}")));
        }
        let len = c * h * w;
        Ok(Tensor { shape: vec![1, c, h, w], data: self.data[i * len..(i + 1) * len].to_vec() })
    }
}
