use std::sync::Arc;

use super::kernels::{self, same_shape};
use super::{shape_err, Ops, Real, Scale, SparseMap, Tensor, TensorError};

/// Eager evaluator. Values are reference counted, so intermediates are
/// released as soon as the model code drops them.
#[derive(Default)]
pub struct Eval;

impl Eval {
    pub fn new() -> Self {
        Eval
    }
}

fn zip_map<T: Real>(
    op: &'static str,
    a: &Tensor<T>,
    b: &Tensor<T>,
    f: impl Fn(T, T) -> T,
) -> Result<Tensor<T>, TensorError> {
    same_shape(op, a, b)?;
    Tensor::new(a.shape().to_vec(), a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect())
}

pub(crate) fn l1_value<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<T, TensorError> {
    same_shape("l1_loss", a, b)?;
    Ok(T::of(a.data().iter().zip(b.data()).map(|(x, y)| (x.as_f64() - y.as_f64()).abs()).sum()))
}

pub(crate) fn sq_err_value<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<T, TensorError> {
    same_shape("sq_err", a, b)?;
    Ok(T::of(a.data().iter().zip(b.data()).map(|(x, y)| (x.as_f64() - y.as_f64()).powi(2)).sum()))
}

pub(crate) fn dot_value<T: Real>(a: &Tensor<T>, w: &Tensor<T>) -> Result<T, TensorError> {
    same_shape("dot", a, w)?;
    Ok(T::of(a.data().iter().zip(w.data()).map(|(x, y)| x.as_f64() * y.as_f64()).sum()))
}

impl<T: Real> Ops<T> for Eval {
    type V = Arc<Tensor<T>>;

    fn constant(&mut self, t: Tensor<T>) -> Self::V {
        Arc::new(t)
    }

    fn value<'a>(&'a self, v: &'a Self::V) -> &'a Tensor<T> {
        v
    }

    fn conv2d(
        &mut self,
        x: &Self::V,
        w: &Self::V,
        b: Option<&Self::V>,
        stride: usize,
        pad: usize,
    ) -> Result<Self::V, TensorError> {
        kernels::conv2d(x, w, b.map(|b| &**b), stride, pad).map(Arc::new)
    }

    fn prelu(&mut self, x: &Self::V, slope: &Self::V) -> Result<Self::V, TensorError> {
        kernels::prelu(x, slope).map(Arc::new)
    }

    fn relu(&mut self, x: &Self::V) -> Result<Self::V, TensorError> {
        Ok(Arc::new(x.map(|v| v.max(T::zero()))))
    }

    fn add(&mut self, a: &Self::V, b: &Self::V) -> Result<Self::V, TensorError> {
        zip_map("add", a, b, |x, y| x + y).map(Arc::new)
    }

    fn sub(&mut self, a: &Self::V, b: &Self::V) -> Result<Self::V, TensorError> {
        zip_map("sub", a, b, |x, y| x - y).map(Arc::new)
    }

    fn scale(&mut self, x: &Self::V, factor: f64) -> Result<Self::V, TensorError> {
        let f = T::of(factor);
        Ok(Arc::new(x.map(|v| v * f)))
    }

    fn resize(&mut self, x: &Self::V, scale: Scale) -> Result<Self::V, TensorError> {
        kernels::bilinear_resize(x, scale).map(Arc::new)
    }

    fn gauss_down(&mut self, x: &Self::V) -> Result<Self::V, TensorError> {
        kernels::gauss_down(x).map(Arc::new)
    }

    fn concat_channels(&mut self, parts: &[&Self::V]) -> Result<Self::V, TensorError> {
        let refs: Vec<&Tensor<T>> = parts.iter().map(|p| &***p).collect();
        kernels::concat_channels(&refs).map(Arc::new)
    }

    fn joint_norm(&mut self, a: &Self::V, b: &Self::V) -> Result<Self::V, TensorError> {
        kernels::joint_norm(a, b).map(Arc::new)
    }

    fn channel_affine(&mut self, x: &Self::V, scale: Vec<f64>, shift: Vec<f64>) -> Result<Self::V, TensorError> {
        kernels::channel_affine(x, &scale, &shift).map(Arc::new)
    }

    fn spatial_map(&mut self, x: &Self::V, maps: Arc<Vec<SparseMap>>) -> Result<Self::V, TensorError> {
        kernels::splat(x, &maps).map(Arc::new)
    }

    fn l1(&mut self, a: &Self::V, b: &Self::V) -> Result<Self::V, TensorError> {
        l1_value(a, b).map(|v| Arc::new(Tensor::scalar(v)))
    }

    fn sq_err(&mut self, a: &Self::V, b: &Self::V) -> Result<Self::V, TensorError> {
        sq_err_value(a, b).map(|v| Arc::new(Tensor::scalar(v)))
    }

    fn dot(&mut self, x: &Self::V, w: Tensor<T>) -> Result<Self::V, TensorError> {
        dot_value(x, &w).map(|v| Arc::new(Tensor::scalar(v)))
    }

    fn sum(&mut self, x: &Self::V) -> Result<Self::V, TensorError> {
        if x.numel() == 0 {
            return Err(shape_err("sum", "empty tensor"));
        }
        Ok(Arc::new(Tensor::scalar(T::of(x.sum()))))
    }
}
