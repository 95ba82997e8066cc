//! Brightness-constancy validity and hole-preserving forward warping.

use std::sync::Arc;

use rayon::prelude::*;

use crate::codecs::{FlowField, Frame};
use crate::context::ContextMap;
use crate::tensor::{Real, SparseMap, Tensor};

/// Accumulated splat weight below which a target pixel is a hole.
pub const HOLE_EPS: f64 = 1e-4;
pub const DEFAULT_TAU: f64 = 0.1;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum WarpError {
    #[error("dimension mismatch: {0}")]
    Dims(String),
    #[error("temporal position {0} is not in [0, 1]")]
    BadTime(f64),
    #[error("brightness threshold must be positive, got {0}")]
    BadTau(f64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ValidityMask {
    width: usize,
    height: usize,
    valid: Vec<bool>,
}

impl ValidityMask {
    pub fn all(width: usize, height: usize) -> Self {
        ValidityMask { width, height, valid: vec![true; width * height] }
    }

    pub fn new(width: usize, height: usize, valid: Vec<bool>) -> Result<Self, WarpError> {
        if valid.len() != width * height {
            return Err(WarpError::Dims(format!("mask of {} flags for {width}x{height}", valid.len())));
        }
        Ok(ValidityMask { width, height, valid })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn flags(&self) -> &[bool] {
        &self.valid
    }

    pub fn is_valid(&self, index: usize) -> bool {
        self.valid[index]
    }

    pub fn count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }
}

fn check_dims(what: &str, a: (usize, usize), b: (usize, usize)) -> Result<(), WarpError> {
    if a != b {
        return Err(WarpError::Dims(format!("{what}: {}x{} vs {}x{}", a.0, a.1, b.0, b.1)));
    }
    Ok(())
}

fn sample_bilinear(plane: &[f32], w: usize, h: usize, x: f64, y: f64) -> f64 {
    let (x0, y0) = (x.floor().max(0.0) as usize, y.floor().max(0.0) as usize);
    let (x0, y0) = (x0.min(w - 1), y0.min(h - 1));
    let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
    let (fx, fy) = (x - x0 as f64, y - y0 as f64);
    let at = |yy: usize, xx: usize| plane[yy * w + xx] as f64;
    at(y0, x0) * (1.0 - fx) * (1.0 - fy) + at(y0, x1) * fx * (1.0 - fy) + at(y1, x0) * (1.0 - fx) * fy + at(y1, x1) * fx * fy
}

/// Marks pixels whose flow is known, lands inside `b`, and whose mean RGB
/// residual `|a(x) - b(x + f(x))|` is at most `tau`.
pub fn check_brightness_constancy(a: &Frame, b: &Frame, f: &FlowField, tau: f64) -> Result<ValidityMask, WarpError> {
    check_dims("frames", (a.width(), a.height()), (b.width(), b.height()))?;
    check_dims("flow", (a.width(), a.height()), (f.width(), f.height()))?;
    if !(tau > 0.0) {
        return Err(WarpError::BadTau(tau));
    }
    let (w, h) = (a.width(), a.height());
    let valid = (0..w * h)
        .into_par_iter()
        .map(|i| {
            if !f.is_known(i) {
                return false;
            }
            let tx = (i % w) as f64 + f.u()[i] as f64;
            let ty = (i / w) as f64 + f.v()[i] as f64;
            if !(0.0..=(w - 1) as f64).contains(&tx) || !(0.0..=(h - 1) as f64).contains(&ty) {
                return false;
            }
            let residual: f64 = (0..3)
                .map(|c| (a.plane(c)[i] as f64 - sample_bilinear(b.plane(c), w, h, tx, ty)).abs())
                .sum::<f64>()
                / 3.0;
            residual <= tau
        })
        .collect();
    Ok(ValidityMask { width: w, height: h, valid })
}

/// Bilinear footprints `(target, source, weight)` of every valid source
/// pixel displaced by `t * f`. Footprint corners outside the image are
/// dropped, as are zero weights.
pub fn splat_entries(f: &FlowField, t: f64, valid: &ValidityMask) -> Vec<(u32, u32, f64)> {
    let (w, h) = (f.width(), f.height());
    let mut out = Vec::with_capacity(4 * w * h);
    for i in 0..w * h {
        if !valid.is_valid(i) || !f.is_known(i) {
            continue;
        }
        let tx = (i % w) as f64 + t * f.u()[i] as f64;
        let ty = (i / w) as f64 + t * f.v()[i] as f64;
        let (fx0, fy0) = (tx.floor(), ty.floor());
        let (ax, ay) = (tx - fx0, ty - fy0);
        for (dy, wy) in [(0.0, 1.0 - ay), (1.0, ay)] {
            for (dx, wx) in [(0.0, 1.0 - ax), (1.0, ax)] {
                let (x, y) = (fx0 + dx, fy0 + dy);
                let weight = wx * wy;
                if weight == 0.0 || x < 0.0 || y < 0.0 || x >= w as f64 || y >= h as f64 {
                    continue;
                }
                out.push(((y as usize * w + x as usize) as u32, i as u32, weight));
            }
        }
    }
    out
}

pub fn splat_map(f: &FlowField, t: f64, valid: &ValidityMask) -> Result<SparseMap, WarpError> {
    if !t.is_finite() {
        return Err(WarpError::BadTime(t));
    }
    check_dims("validity", (f.width(), f.height()), (valid.width, valid.height))?;
    let n = f.width() * f.height();
    Ok(SparseMap::from_entries(n, n, HOLE_EPS, &splat_entries(f, t, valid)))
}

/// A frame and its context forward-warped to time `t`.
#[derive(Clone, Debug)]
pub struct WarpBundle {
    pub image: Frame,
    pub context: ContextMap,
    pub t: f64,
    map: Arc<SparseMap>,
}

impl WarpBundle {
    /// Per-pixel accumulated splat weight.
    pub fn weight(&self) -> &[f64] {
        self.map.totals()
    }

    pub fn is_hole(&self, index: usize) -> bool {
        self.map.is_hole(index)
    }

    pub fn map(&self) -> &Arc<SparseMap> {
        &self.map
    }

    /// Weight map as a gray image, clamped to `[0, 1]`.
    pub fn weight_image(&self) -> Frame {
        let (w, h) = (self.image.width(), self.image.height());
        Frame::from_fn(w, h, |_, y, x| self.map.totals()[y * w + x].clamp(0.0, 1.0) as f32)
    }
}

pub(crate) fn apply_map<T: Real>(map: &SparseMap, x: &Tensor<T>) -> Tensor<T> {
    let plane = map.sources();
    let mut out = Tensor::zeros(x.shape());
    out.data_mut().par_chunks_mut(plane).zip(x.data().par_chunks(plane)).for_each(|(d, s)| map.apply(s, d));
    out
}

pub fn bundle_from_map(image: &Frame, context: &ContextMap, map: Arc<SparseMap>, t: f64) -> Result<WarpBundle, WarpError> {
    check_dims("context", (image.width(), image.height()), (context.width(), context.height()))?;
    if map.sources() != image.pixels() {
        return Err(WarpError::Dims(format!("splat map covers {} pixels, frame has {}", map.sources(), image.pixels())));
    }
    let warped = apply_map(&map, &image.to_tensor::<f32>());
    let image = Frame::from_tensor(&warped, 0).expect("warped image keeps its layout");
    let context = ContextMap::from_tensor(apply_map(&map, context.tensor())).expect("warped context keeps its layout");
    Ok(WarpBundle { image, context, t, map })
}

pub fn forward_warp(
    image: &Frame,
    context: &ContextMap,
    f: &FlowField,
    t: f64,
    valid: &ValidityMask,
) -> Result<WarpBundle, WarpError> {
    if !t.is_finite() {
        return Err(WarpError::BadTime(t));
    }
    check_dims("flow", (image.width(), image.height()), (f.width(), f.height()))?;
    let map = splat_map(f, t, valid)?;
    bundle_from_map(image, context, Arc::new(map), t)
}

/// Splat maps for both directions at time `t`. Validity is measured with the
/// full flow; warping uses the scaled flow. The frame at the near endpoint
/// (`t = 0` for the first, `t = 1` for the second) maps through identity.
pub fn prewarp_maps(
    i1: &Frame,
    i2: &Frame,
    f12: &FlowField,
    f21: &FlowField,
    t: f64,
    tau: f64,
) -> Result<(SparseMap, SparseMap), WarpError> {
    if !(0.0..=1.0).contains(&t) {
        return Err(WarpError::BadTime(t));
    }
    let near = |scale: f64, a: &Frame, b: &Frame, f: &FlowField| -> Result<SparseMap, WarpError> {
        if scale == 0.0 {
            check_dims("flow", (a.width(), a.height()), (f.width(), f.height()))?;
            return Ok(SparseMap::identity(a.pixels()));
        }
        let valid = check_brightness_constancy(a, b, f, tau)?;
        splat_map(f, scale, &valid)
    };
    Ok((near(t, i1, i2, f12)?, near(1.0 - t, i2, i1, f21)?))
}

#[allow(clippy::too_many_arguments)]
pub fn prewarp_pair(
    i1: &Frame,
    i2: &Frame,
    c1: &ContextMap,
    c2: &ContextMap,
    f12: &FlowField,
    f21: &FlowField,
    t: f64,
    tau: f64,
) -> Result<(WarpBundle, WarpBundle), WarpError> {
    check_dims("frames", (i1.width(), i1.height()), (i2.width(), i2.height()))?;
    let (m1, m2) = prewarp_maps(i1, i2, f12, f21, t, tau)?;
    Ok((bundle_from_map(i1, c1, Arc::new(m1), t)?, bundle_from_map(i2, c2, Arc::new(m2), t)?))
}

/// Per pixel: `(1 - t) b1 + t b2` where both are filled, the filled one where
/// one is a hole, zero where both are.
pub fn blend_baseline(b1: &WarpBundle, b2: &WarpBundle, t: f64) -> Result<Frame, WarpError> {
    check_dims("bundles", (b1.image.width(), b1.image.height()), (b2.image.width(), b2.image.height()))?;
    let (w, h) = (b1.image.width(), b1.image.height());
    let t32 = t as f32;
    Ok(Frame::from_fn(w, h, |c, y, x| {
        let i = y * w + x;
        let (p, q) = (b1.image.get(c, y, x), b2.image.get(c, y, x));
        match (b1.is_hole(i), b2.is_hole(i)) {
            (false, false) => (1.0 - t32) * p + t32 * q,
            (false, true) => p,
            (true, false) => q,
            (true, true) => 0.0,
        }
    }))
}

/// Single-direction baseline: the first bundle as is, holes zero.
pub fn forward_blend(b1: &WarpBundle) -> Frame {
    b1.image.clone()
}
