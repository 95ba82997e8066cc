//! Frame synthesis: joint instance normalization, the GridNet, and the full
//! context-aware interpolation model.

mod gridnet;
mod model;
mod norm;

pub use gridnet::{GridNet, GridNetConfig};
pub use model::{
    interpolate, pad_reflect, synthesis_forward, synthesize, warp_inputs, Interpolation, Model, ModelError,
    CHECKPOINT_VERSION,
};
pub use norm::{denormalize, instance_normalize_pair, NormStats};
