//! Coarse-to-fine block-matching flow estimator and flow statistics.

use rayon::prelude::*;

use crate::codecs::{FlowField, Frame};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum FlowError {
    #[error("frame dimensions differ: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(usize, usize, usize, usize),
    #[error("{width}x{height} is too small for {levels} pyramid levels (need at least {need} px per side)")]
    TooSmall { width: usize, height: usize, levels: usize, need: usize },
    #[error("invalid pyramid configuration: {0}")]
    Config(String),
    #[error("flow field has no known vectors")]
    AllUnknown,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PyramidConfig {
    pub levels: usize,
    /// Matching block radius.
    pub block: usize,
    /// Integer search radius per level.
    pub search: usize,
}

impl Default for PyramidConfig {
    fn default() -> Self {
        PyramidConfig { levels: 5, block: 3, search: 4 }
    }
}

impl PyramidConfig {
    fn min_side(levels: usize) -> usize {
        (1usize << (levels - 1)) * 8
    }

    /// Default configuration with the levels reduced until the coarsest
    /// level is at least 16 px per side. Smaller coarse levels are dominated
    /// by replicated borders and give unreliable initial estimates.
    pub fn fitted(width: usize, height: usize) -> Self {
        let mut cfg = Self::default();
        while cfg.levels > 1 && width.min(height) < 2 * Self::min_side(cfg.levels) {
            cfg.levels -= 1;
        }
        cfg
    }
}

struct Plane {
    w: usize,
    h: usize,
    px: Vec<f32>,
}

impl Plane {
    fn at(&self, y: isize, x: isize) -> f32 {
        let y = y.clamp(0, self.h as isize - 1) as usize;
        let x = x.clamp(0, self.w as isize - 1) as usize;
        self.px[y * self.w + x]
    }

    fn half(&self) -> Plane {
        let (w, h) = (self.w / 2, self.h / 2);
        let mut px = Vec::with_capacity(w * h);
        for y in 0..h {
            for x in 0..w {
                let i = 2 * y * self.w + 2 * x;
                px.push(0.25 * (self.px[i] + self.px[i + 1] + self.px[i + self.w] + self.px[i + self.w + 1]));
            }
        }
        Plane { w, h, px }
    }
}

fn pyramid(frame: &Frame, levels: usize) -> Vec<Plane> {
    let mut p = vec![Plane { w: frame.width(), h: frame.height(), px: frame.luma() }];
    for _ in 1..levels {
        let next = p.last().unwrap().half();
        p.push(next);
    }
    p
}

fn ssd(a: &Plane, b: &Plane, y: isize, x: isize, du: isize, dv: isize, r: isize) -> f32 {
    let mut acc = 0.0f32;
    for oy in -r..=r {
        for ox in -r..=r {
            let d = a.at(y + oy, x + ox) - b.at(y + oy + dv, x + ox + du);
            acc += d * d;
        }
    }
    acc
}

/// Integer flow from `a` to `b` such that `a(x) ~ b(x + F(x))`.
pub fn estimate_flow(a: &Frame, b: &Frame, cfg: &PyramidConfig) -> Result<FlowField, FlowError> {
    if !a.same_dims(b) {
        return Err(FlowError::DimensionMismatch(a.width(), a.height(), b.width(), b.height()));
    }
    if cfg.levels == 0 {
        return Err(FlowError::Config("levels must be at least 1".into()));
    }
    let need = PyramidConfig::min_side(cfg.levels);
    if a.width().min(a.height()) < need {
        return Err(FlowError::TooSmall { width: a.width(), height: a.height(), levels: cfg.levels, need });
    }
    let (pa, pb) = (pyramid(a, cfg.levels), pyramid(b, cfg.levels));
    let (r, s) = (cfg.block as isize, cfg.search as isize);
    let mut flow: Vec<(i32, i32)> = Vec::new();
    let mut prev_w = 0;
    for level in (0..cfg.levels).rev() {
        let (la, lb) = (&pa[level], &pb[level]);
        let prev = std::mem::take(&mut flow);
        let coarse_h = if prev.is_empty() { 0 } else { prev.len() / prev_w };
        flow = (0..la.h * la.w)
            .into_par_iter()
            .map(|i| {
                let (y, x) = ((i / la.w) as isize, (i % la.w) as isize);
                let (pu, pv) = if prev.is_empty() {
                    (0, 0)
                } else {
                    let cy = ((y / 2) as usize).min(coarse_h - 1);
                    let cx = ((x / 2) as usize).min(prev_w - 1);
                    let (u, v) = prev[cy * prev_w + cx];
                    (2 * u as isize, 2 * v as isize)
                };
                let mut best = (f32::INFINITY, isize::MAX, 0isize, 0isize);
                for du in pu - s..=pu + s {
                    for dv in pv - s..=pv + s {
                        let cost = ssd(la, lb, y, x, du, dv, r);
                        let key = (cost, du * du + dv * dv, du, dv);
                        if key.0 < best.0 || (key.0 == best.0 && (key.1, key.2, key.3) < (best.1, best.2, best.3)) {
                            best = key;
                        }
                    }
                }
                (best.2 as i32, best.3 as i32)
            })
            .collect();
        prev_w = la.w;
    }
    let (u, v) = flow.into_iter().map(|(u, v)| (u as f32, v as f32)).unzip();
    Ok(FlowField::new(a.width(), a.height(), u, v).expect("estimated flow has frame dimensions"))
}

/// Flow in both directions: `(a -> b, b -> a)`.
pub fn estimate_bidirectional(a: &Frame, b: &Frame, cfg: &PyramidConfig) -> Result<(FlowField, FlowField), FlowError> {
    Ok((estimate_flow(a, b, cfg)?, estimate_flow(b, a, cfg)?))
}

/// Mean vector length over known vectors.
pub fn mean_flow_magnitude(f: &FlowField) -> Result<f64, FlowError> {
    Ok(flow_stats(f, 21.0)?.mean)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FlowStats {
    pub mean: f64,
    pub max: f64,
    /// Fraction of known vectors at least `threshold` long.
    pub large_fraction: f64,
    pub known: usize,
}

pub fn flow_stats(f: &FlowField, threshold: f64) -> Result<FlowStats, FlowError> {
    let (mut sum, mut max, mut large, mut known) = (0.0f64, 0.0f64, 0usize, 0usize);
    for i in 0..f.u().len() {
        if !f.is_known(i) {
            continue;
        }
        let m = (f.u()[i] as f64).hypot(f.v()[i] as f64);
        sum += m;
        max = max.max(m);
        large += (m >= threshold) as usize;
        known += 1;
    }
    if known == 0 {
        return Err(FlowError::AllUnknown);
    }
    Ok(FlowStats { mean: sum / known as f64, max, large_fraction: large as f64 / known as f64, known })
}
