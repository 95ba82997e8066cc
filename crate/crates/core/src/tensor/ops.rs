use std::sync::Arc;

use super::{Real, Scale, SparseMap, Tensor, TensorError};

/// The operator vocabulary of the engine.
///
/// Model code is written once against this trait and runs either on a
/// [`Tape`](super::Tape) (recording for reverse mode) or on
/// [`Eval`](super::Eval) (eager, intermediates freed as soon as they drop).
pub trait Ops<T: Real> {
    type V: Clone;

    fn constant(&mut self, t: Tensor<T>) -> Self::V;
    fn value<'a>(&'a self, v: &'a Self::V) -> &'a Tensor<T>;

    fn conv2d(
        &mut self,
        x: &Self::V,
        w: &Self::V,
        b: Option<&Self::V>,
        stride: usize,
        pad: usize,
    ) -> Result<Self::V, TensorError>;
    fn prelu(&mut self, x: &Self::V, slope: &Self::V) -> Result<Self::V, TensorError>;
    fn relu(&mut self, x: &Self::V) -> Result<Self::V, TensorError>;
    fn add(&mut self, a: &Self::V, b: &Self::V) -> Result<Self::V, TensorError>;
    fn sub(&mut self, a: &Self::V, b: &Self::V) -> Result<Self::V, TensorError>;
    fn scale(&mut self, x: &Self::V, factor: f64) -> Result<Self::V, TensorError>;
    fn resize(&mut self, x: &Self::V, scale: Scale) -> Result<Self::V, TensorError>;
    /// Binomial blur and decimation by two.
    fn gauss_down(&mut self, x: &Self::V) -> Result<Self::V, TensorError>;
    fn concat_channels(&mut self, parts: &[&Self::V]) -> Result<Self::V, TensorError>;
    /// Joint instance normalization of `a` and `b`; output is `[a', b']`
    /// concatenated along channels.
    fn joint_norm(&mut self, a: &Self::V, b: &Self::V) -> Result<Self::V, TensorError>;
    /// `x * scale + shift` with one coefficient per (sample, channel).
    fn channel_affine(&mut self, x: &Self::V, scale: Vec<f64>, shift: Vec<f64>) -> Result<Self::V, TensorError>;
    /// Applies one [`SparseMap`] per batch sample to every channel plane.
    fn spatial_map(&mut self, x: &Self::V, maps: Arc<Vec<SparseMap>>) -> Result<Self::V, TensorError>;

    /// `sum |a - b|`
    fn l1(&mut self, a: &Self::V, b: &Self::V) -> Result<Self::V, TensorError>;
    /// `sum (a - b)^2`
    fn sq_err(&mut self, a: &Self::V, b: &Self::V) -> Result<Self::V, TensorError>;
    /// `sum x * w` for a constant `w`.
    fn dot(&mut self, x: &Self::V, w: Tensor<T>) -> Result<Self::V, TensorError>;
    fn sum(&mut self, x: &Self::V) -> Result<Self::V, TensorError>;
}
