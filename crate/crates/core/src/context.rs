//! Per-pixel context features: a single 7x7, stride-1, 64-channel
//! convolution, optionally rectified.

use rand::Rng;

use crate::codecs::{CodecError, Frame, TensorContainer};
use crate::tensor::{Eval, Ops, ParamStore, Real, Tensor, TensorError};

pub const CONTEXT_CHANNELS: usize = 64;
pub const KERNEL: usize = 7;
const WEIGHT: &str = "ctx.weight";
const BIAS: &str = "ctx.bias";
const WEIGHT_SHAPE: [usize; 4] = [CONTEXT_CHANNELS, 3, KERNEL, KERNEL];

#[derive(Debug, thiserror::Error)]
pub enum ContextError {
    #[error("context weights: {0}")]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("context weight has shape {0:?}, expected 64x3x7x7")]
    WeightShape(Vec<usize>),
    #[error("empty frame")]
    EmptyFrame,
}

/// 64-channel context map on the grid of its source frame.
#[derive(Clone, Debug, PartialEq)]
pub struct ContextMap {
    features: Tensor<f32>,
}

impl ContextMap {
    pub fn from_tensor(features: Tensor<f32>) -> Result<Self, ContextError> {
        let s = features.shape();
        if s.len() != 4 || s[0] != 1 || s[1] != CONTEXT_CHANNELS {
            return Err(ContextError::Tensor(TensorError::Shape {
                op: "context_map",
                detail: format!("expected 1x64xHxW, got {s:?}"),
            }));
        }
        Ok(ContextMap { features })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        ContextMap { features: Tensor::zeros(&[1, CONTEXT_CHANNELS, height, width]) }
    }

    pub fn width(&self) -> usize {
        self.features.shape()[3]
    }

    pub fn height(&self) -> usize {
        self.features.shape()[2]
    }

    /// `1 x 64 x H x W`.
    pub fn tensor(&self) -> &Tensor<f32> {
        &self.features
    }

    pub fn into_tensor(self) -> Tensor<f32> {
        self.features
    }
}

#[derive(Clone, Debug)]
pub struct ContextExtractor<T = f32> {
    pub params: ParamStore<T>,
    /// Apply a rectifier after the convolution.
    pub rectify: bool,
    /// Whether training updates the weights.
    pub trainable: bool,
}

impl<T: Real> ContextExtractor<T> {
    /// Randomly initialized, trainable, rectified.
    pub fn random(rng: &mut impl Rng) -> Self {
        let fan_in = 3 * KERNEL * KERNEL;
        let mut params = ParamStore::new();
        params.register(WEIGHT, ParamStore::uniform(&WEIGHT_SHAPE, fan_in, rng));
        params.register(BIAS, ParamStore::uniform(&[CONTEXT_CHANNELS], fan_in, rng));
        ContextExtractor { params, rectify: true, trainable: true }
    }

    pub fn from_parts(weight: Tensor<T>, bias: Tensor<T>, rectify: bool) -> Result<Self, ContextError> {
        if weight.shape() != WEIGHT_SHAPE {
            return Err(ContextError::WeightShape(weight.shape().to_vec()));
        }
        if bias.shape() != [CONTEXT_CHANNELS] {
            return Err(ContextError::Codec(CodecError::Container(format!(
                "entry \"{BIAS}\" has dims {:?}, expected [64]",
                bias.shape()
            ))));
        }
        let mut params = ParamStore::new();
        params.register(WEIGHT, weight);
        params.register(BIAS, bias);
        Ok(ContextExtractor { params, rectify, trainable: false })
    }

    /// Loads `ctx.weight` and `ctx.bias`; the result is frozen.
    pub fn load(container: &TensorContainer) -> Result<Self, ContextError> {
        let weight = container.tensor(WEIGHT, Some(&WEIGHT_SHAPE))?;
        let bias = container.tensor(BIAS, Some(&[CONTEXT_CHANNELS]))?;
        Self::from_parts(weight, bias, true)
    }

    pub fn save(&self, container: &mut TensorContainer) -> Result<(), CodecError> {
        for (name, t) in self.params.iter() {
            container.push_tensor(name, t)?;
        }
        Ok(())
    }

    pub fn weight(&self) -> &Tensor<T> {
        self.params.by_name(WEIGHT).expect("extractor has a weight")
    }

    pub fn bias(&self) -> &Tensor<T> {
        self.params.by_name(BIAS).expect("extractor has a bias")
    }

    pub fn cast<U: Real>(&self) -> ContextExtractor<U> {
        ContextExtractor { params: self.params.cast(), rectify: self.rectify, trainable: self.trainable }
    }

    /// Context features of an `N x 3 x H x W` batch using bound `[weight, bias]`.
    pub fn forward<O: Ops<T>>(&self, ops: &mut O, params: &[O::V], x: &O::V) -> Result<O::V, TensorError> {
        let y = ops.conv2d(x, &params[0], Some(&params[1]), 1, KERNEL / 2)?;
        if self.rectify {
            ops.relu(&y)
        } else {
            Ok(y)
        }
    }
}

pub fn extract_context(frame: &Frame, ex: &ContextExtractor<f32>) -> Result<ContextMap, ContextError> {
    if frame.pixels() == 0 {
        return Err(ContextError::EmptyFrame);
    }
    let mut ops = Eval::new();
    let params = ex.params.bind_constants(&mut ops);
    let x = ops.constant(frame.to_tensor());
    let y = ex.forward(&mut ops, &params, &x)?;
    ContextMap::from_tensor(std::sync::Arc::unwrap_or_clone(y))
}

/// Folds an inference-mode batch normalization that follows a convolution
/// into the convolution's weight and bias.
pub fn fold_batch_norm(
    weight: &Tensor<f32>,
    bias: Option<&Tensor<f32>>,
    gamma: &[f32],
    beta: &[f32],
    mean: &[f32],
    var: &[f32],
    eps: f32,
) -> Result<(Tensor<f32>, Tensor<f32>), TensorError> {
    let o = weight.shape()[0];
    if [gamma.len(), beta.len(), mean.len(), var.len()].iter().any(|&n| n != o) {
        return Err(TensorError::Shape { op: "fold_batch_norm", detail: format!("expected {o} statistics per channel") });
    }
    let per = weight.numel() / o;
    let mut w = weight.clone();
    let mut b = vec![0.0f32; o];
    for c in 0..o {
        let s = gamma[c] / (var[c] + eps).sqrt();
        w.data_mut()[c * per..(c + 1) * per].iter_mut().for_each(|v| *v *= s);
        let b0 = bias.map_or(0.0, |b| b.data()[c]);
        b[c] = (b0 - mean[c]) * s + beta[c];
    }
    Ok((w, Tensor::new(vec![o], b)?))
}
