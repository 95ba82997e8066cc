use std::path::Path;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{GridNet, GridNetConfig};
use crate::codecs::{self, CodecError, FlowField, Frame, TensorContainer};
use crate::context::{extract_context, ContextError, ContextExtractor, ContextMap, CONTEXT_CHANNELS};
use crate::tensor::kernels::{joint_stats, reflect};
use crate::tensor::{Eval, Ops, ParamStore, Real, SparseMap, Tensor, TensorError};
use crate::warping::{prewarp_pair, WarpBundle, WarpError};

/// Version of the parameter layout written to `meta.config`.
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Context(#[from] ContextError),
    #[error(transparent)]
    Warp(#[from] WarpError),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

/// GridNet synthesis network plus the context extractor feeding it.
#[derive(Clone, Debug)]
pub struct Model {
    pub grid: GridNet<f32>,
    pub context: ContextExtractor<f32>,
}

impl Model {
    pub fn new(config: GridNetConfig, seed: u64) -> Result<Self, ModelError> {
        if config.in_channels != 6 + 2 * CONTEXT_CHANNELS || config.out_channels != 3 {
            return Err(ModelError::Checkpoint(format!(
                "model needs 134 input and 3 output channels, got {} and {}",
                config.in_channels, config.out_channels
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let grid = GridNet::new(config, &mut rng)?;
        let context = ContextExtractor::random(&mut rng);
        Ok(Model { grid, context })
    }

    pub fn to_container(&self) -> Result<TensorContainer, CodecError> {
        let cfg = &self.grid.config;
        let mut meta = vec![CHECKPOINT_VERSION as f32, cfg.rows as f32, cfg.cols as f32];
        meta.extend([cfg.in_channels as f32, cfg.out_channels as f32]);
        meta.extend(cfg.channels.iter().map(|&c| c as f32));
        let mut c = TensorContainer::new();
        c.push("meta.config", vec![meta.len()], meta)?;
        c.push("meta.context", vec![2], vec![self.context.rectify as u8 as f32, self.context.trainable as u8 as f32])?;
        for (name, t) in self.grid.params.iter() {
            c.push_tensor(name, t)?;
        }
        self.context.save(&mut c)?;
        Ok(c)
    }

    pub fn from_container(c: &TensorContainer) -> Result<Self, ModelError> {
        let meta = &c.get("meta.config").ok_or_else(|| ModelError::Checkpoint("missing entry \"meta.config\"".into()))?.data;
        if meta.len() < 6 || meta[0] != CHECKPOINT_VERSION as f32 {
            return Err(ModelError::Checkpoint(format!("unsupported layout {:?}", meta.first())));
        }
        let rows = meta[1] as usize;
        if meta.len() != 5 + rows {
            return Err(ModelError::Checkpoint("meta.config length does not match its row count".into()));
        }
        let config = GridNetConfig {
            rows,
            cols: meta[2] as usize,
            in_channels: meta[3] as usize,
            out_channels: meta[4] as usize,
            channels: meta[5..].iter().map(|&v| v as usize).collect(),
        };
        let mut params = ParamStore::new();
        for e in c.entries() {
            if e.name.starts_with("head.") || e.name.starts_with("grid.") || e.name.starts_with("tail.") {
                params.register(e.name.clone(), c.tensor(&e.name, None)?);
            }
        }
        let grid = GridNet::with_params(config, params)?;
        let mut context = ContextExtractor::load(c)?;
        let flags = c.values("meta.context", 2).map_err(ModelError::Codec)?;
        context.rectify = flags[0] != 0.0;
        context.trainable = flags[1] != 0.0;
        Ok(Model { grid, context })
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        Ok(codecs::save_container(path, &self.to_container()?)?)
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        Self::from_container(&codecs::load_container(path)?)
    }
}

/// Context extraction and forward warping of both frames of a batch:
/// returns `(image1, image2, context1, context2)` at time t.
#[allow(clippy::type_complexity)]
pub fn warp_inputs<T: Real, O: Ops<T>>(
    ops: &mut O,
    ctx: &ContextExtractor<T>,
    ctx_params: &[O::V],
    i1: &O::V,
    i2: &O::V,
    maps1: Arc<Vec<SparseMap>>,
    maps2: Arc<Vec<SparseMap>>,
) -> Result<(O::V, O::V, O::V, O::V), TensorError> {
    let c1 = ctx.forward(ops, ctx_params, i1)?;
    let c2 = ctx.forward(ops, ctx_params, i2)?;
    Ok((
        ops.spatial_map(i1, maps1.clone())?,
        ops.spatial_map(i2, maps2.clone())?,
        ops.spatial_map(&c1, maps1)?,
        ops.spatial_map(&c2, maps2)?,
    ))
}

/// Network pass on warped inputs. Images are jointly normalized and the
/// normalization is reversed on the output; contexts are normalized only.
/// `contexts = None` feeds zeros in place of the context channels.
pub fn synthesis_forward<T: Real, O: Ops<T>>(
    ops: &mut O,
    grid: &GridNet<T>,
    grid_params: &[O::V],
    img1: &O::V,
    img2: &O::V,
    contexts: Option<(&O::V, &O::V)>,
) -> Result<O::V, TensorError> {
    let (mean, std) = joint_stats(ops.value(img1), ops.value(img2))?;
    let images = ops.joint_norm(img1, img2)?;
    let ctx = match contexts {
        Some((c1, c2)) => ops.joint_norm(c1, c2)?,
        None => {
            let s = ops.value(img1).shape();
            let zeros = Tensor::zeros(&[s[0], 2 * CONTEXT_CHANNELS, s[2], s[3]]);
            ops.constant(zeros)
        }
    };
    let input = ops.concat_channels(&[&images, &ctx])?;
    let out = grid.forward(ops, grid_params, &input)?;
    ops.channel_affine(&out, std, mean)
}

/// Pads the bottom and right edges of an NCHW tensor by mirroring.
pub fn pad_reflect<T: Real>(x: &Tensor<T>, ph: usize, pw: usize) -> Result<Tensor<T>, TensorError> {
    let (n, c, h, w) = x.dims4("pad_reflect")?;
    let (ho, wo) = (h + ph, w + pw);
    let mut out = Vec::with_capacity(n * c * ho * wo);
    for p in 0..n * c {
        let src = &x.data()[p * h * w..(p + 1) * h * w];
        for y in 0..ho {
            let sy = reflect(y as isize, h);
            out.extend((0..wo).map(|xx| src[sy * w + reflect(xx as isize, w)]));
        }
    }
    Tensor::new(vec![n, c, ho, wo], out)
}

fn crop<T: Real>(x: &Tensor<T>, h: usize, w: usize) -> Result<Tensor<T>, TensorError> {
    let (n, c, hi, wi) = x.dims4("crop")?;
    let mut out = Vec::with_capacity(n * c * h * w);
    for p in 0..n * c {
        for y in 0..h {
            out.extend_from_slice(&x.data()[(p * hi + y) * wi..][..w]);
        }
    }
    Tensor::new(vec![n, c, h, w], out)
}

/// Synthesizes the frame at the bundles' time. Extents that are not
/// multiples of the network divisor are mirror-padded and cropped back.
pub fn synthesize(b1: &WarpBundle, b2: &WarpBundle, model: &Model, zero_context: bool) -> Result<Frame, ModelError> {
    if !b1.image.same_dims(&b2.image) {
        return Err(ModelError::Warp(WarpError::Dims("bundles differ in size".into())));
    }
    let (h, w) = (b1.image.height(), b1.image.width());
    let d = model.grid.config.divisor();
    let (ph, pw) = ((d - h % d) % d, (d - w % d) % d);
    let pad = |t: &Tensor<f32>| pad_reflect(t, ph, pw);
    let mut ops = Eval::new();
    let params = model.grid.params.bind_constants(&mut ops);
    let i1 = ops.constant(pad(&b1.image.to_tensor())?);
    let i2 = ops.constant(pad(&b2.image.to_tensor())?);
    let out = if zero_context {
        synthesis_forward(&mut ops, &model.grid, &params, &i1, &i2, None)?
    } else {
        let c1 = ops.constant(pad(b1.context.tensor())?);
        let c2 = ops.constant(pad(b2.context.tensor())?);
        synthesis_forward(&mut ops, &model.grid, &params, &i1, &i2, Some((&c1, &c2)))?
    };
    Ok(Frame::from_tensor(&crop(&out, h, w)?, 0)?)
}

pub struct Interpolation {
    pub frame: Frame,
    pub bundles: (WarpBundle, WarpBundle),
}

/// Full pipeline: context, pre-warping to `t`, synthesis.
#[allow(clippy::too_many_arguments)]
pub fn interpolate(
    i1: &Frame,
    i2: &Frame,
    f12: &FlowField,
    f21: &FlowField,
    t: f64,
    tau: f64,
    model: &Model,
    zero_context: bool,
) -> Result<Interpolation, ModelError> {
    let (c1, c2): (ContextMap, ContextMap) = (extract_context(i1, &model.context)?, extract_context(i2, &model.context)?);
    let (b1, b2) = prewarp_pair(i1, i2, &c1, &c2, f12, f21, t, tau)?;
    let frame = synthesize(&b1, &b2, model, zero_context)?;
    Ok(Interpolation { frame, bundles: (b1, b2) })
}
