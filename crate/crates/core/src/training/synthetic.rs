//! Procedural scenes of textured squares translating over a smooth
//! background, with exact flow.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Triplet, TrainError};
use crate::codecs::{FlowField, Frame};

#[derive(Clone, Debug, PartialEq)]
pub struct SceneConfig {
    pub width: usize,
    pub height: usize,
    pub min_squares: usize,
    pub max_squares: usize,
    pub min_size: usize,
    pub max_size: usize,
    /// Largest displacement per axis between the first and last frame.
    pub max_shift: i32,
    /// Displacements are multiples of this, so the midpoint lands on whole
    /// pixels when it is even.
    pub shift_step: i32,
    /// Bound on the symmetric brightness change across the triplet.
    pub max_gain_drift: f32,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            width: 64,
            height: 64,
            min_squares: 1,
            max_squares: 2,
            min_size: 12,
            max_size: 20,
            max_shift: 6,
            shift_step: 2,
            max_gain_drift: 0.04,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Square {
    /// Top-left corner at t = 0.
    pub x: i32,
    pub y: i32,
    pub size: usize,
    /// Displacement from t = 0 to t = 1.
    pub dx: i32,
    pub dy: i32,
    pub color: [f32; 3],
    phase: [f32; 2],
}

impl Square {
    fn corner(&self, t: f64) -> (i32, i32) {
        (self.x + (t * self.dx as f64).round() as i32, self.y + (t * self.dy as f64).round() as i32)
    }

    fn covers(&self, t: f64, x: usize, y: usize) -> Option<(usize, usize)> {
        let (cx, cy) = self.corner(t);
        let (u, v) = (x as i32 - cx, y as i32 - cy);
        let s = self.size as i32;
        ((0..s).contains(&u) && (0..s).contains(&v)).then_some((u as usize, v as usize))
    }

    fn texel(&self, c: usize, u: usize, v: usize) -> f32 {
        let sign = if self.color[c] > 0.5 { -1.0 } else { 1.0 };
        let a = (1.1 * u as f32 + self.phase[0] + c as f32).sin() * (0.9 * v as f32 + self.phase[1]).sin();
        self.color[c] + sign * 0.1 * a.abs() + 0.04 * a
    }

    /// Box swept between t = 0 and t = 1: `(x0, y0, x1, y1)`, exclusive end.
    fn swept(&self) -> (i32, i32, i32, i32) {
        let s = self.size as i32;
        (self.x.min(self.x + self.dx), self.y.min(self.y + self.dy), self.x.max(self.x + self.dx) + s, self.y.max(self.y + self.dy) + s)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub width: usize,
    pub height: usize,
    pub squares: Vec<Square>,
    /// Brightness is scaled by `1 + gain_drift * (2t - 1)`.
    pub gain_drift: f32,
    freq: [f32; 2],
    phase: [[f32; 2]; 3],
}

impl Scene {
    pub fn random(cfg: &SceneConfig, rng: &mut impl Rng) -> Result<Self, TrainError> {
        if cfg.min_squares > cfg.max_squares || cfg.min_size > cfg.max_size || cfg.min_size == 0 || cfg.shift_step <= 0 {
            return Err(TrainError::Config("inconsistent scene configuration".into()));
        }
        let steps = cfg.max_shift / cfg.shift_step;
        let want = rng.random_range(cfg.min_squares..=cfg.max_squares);
        let mut squares: Vec<Square> = Vec::new();
        let mut attempts = 0;
        while squares.len() < want {
            attempts += 1;
            if attempts > 10_000 {
                return Err(TrainError::Config(format!("cannot place {want} squares in {}x{}", cfg.width, cfg.height)));
            }
            let size = rng.random_range(cfg.min_size..=cfg.max_size);
            let dx = rng.random_range(-steps..=steps) * cfg.shift_step;
            let dy = rng.random_range(-steps..=steps) * cfg.shift_step;
            let span_x = cfg.width as i32 - size as i32 - dx.abs() - 2;
            let span_y = cfg.height as i32 - size as i32 - dy.abs() - 2;
            if span_x < 0 || span_y < 0 {
                continue;
            }
            let x = 1 + rng.random_range(0..=span_x) + (-dx).max(0);
            let y = 1 + rng.random_range(0..=span_y) + (-dy).max(0);
            let mut color = [0.0f32; 3];
            for c in &mut color {
                let low = rng.random_bool(0.5);
                *c = if low { rng.random_range(0.1..0.25) } else { rng.random_range(0.75..0.9) };
            }
            let sq = Square { x, y, size, dx, dy, color, phase: [rng.random_range(0.0..6.3), rng.random_range(0.0..6.3)] };
            let a = sq.swept();
            let clash = squares.iter().any(|o| {
                let b = o.swept();
                a.0 < b.2 + 2 && b.0 < a.2 + 2 && a.1 < b.3 + 2 && b.1 < a.3 + 2
            });
            if !clash {
                squares.push(sq);
            }
        }
        let d = cfg.max_gain_drift.abs();
        Ok(Scene {
            width: cfg.width,
            height: cfg.height,
            squares,
            gain_drift: if d > 0.0 { rng.random_range(-d..=d) } else { 0.0 },
            freq: [rng.random_range(0.05..0.15), rng.random_range(0.05..0.15)],
            phase: std::array::from_fn(|_| [rng.random_range(0.0..6.3), rng.random_range(0.0..6.3)]),
        })
    }

    fn gain(&self, t: f64) -> f32 {
        1.0 + self.gain_drift * (2.0 * t as f32 - 1.0)
    }

    fn background_value(&self, c: usize, y: usize, x: usize) -> f32 {
        let p = self.phase[c];
        0.5 + 0.12 * (self.freq[0] * x as f32 + p[0]).sin() * (self.freq[1] * y as f32 + p[1]).cos()
    }

    /// Background alone at time `t`.
    pub fn render_background(&self, t: f64) -> Frame {
        let g = self.gain(t);
        Frame::from_fn(self.width, self.height, |c, y, x| (g * self.background_value(c, y, x)).clamp(0.0, 1.0))
    }

    /// The scene at time `t`; corners are rounded to whole pixels.
    pub fn render(&self, t: f64) -> Frame {
        let g = self.gain(t);
        Frame::from_fn(self.width, self.height, |c, y, x| {
            let v = self
                .squares
                .iter()
                .find_map(|s| s.covers(t, x, y).map(|(u, v)| s.texel(c, u, v)))
                .unwrap_or_else(|| self.background_value(c, y, x));
            (g * v).clamp(0.0, 1.0)
        })
    }

    /// Exact flow from the frame at `t0` to the frame at `t1`: square pixels
    /// move with their square, background pixels stay.
    pub fn flow(&self, t0: f64, t1: f64) -> FlowField {
        let k = (t1 - t0) as f32;
        FlowField::from_fn(self.width, self.height, |y, x| {
            self.squares
                .iter()
                .find(|s| s.covers(t0, x, y).is_some())
                .map(|s| (k * s.dx as f32, k * s.dy as f32))
                .unwrap_or((0.0, 0.0))
        })
    }

    /// Frames at 0, 0.5 and 1 with exact flows between the outer two.
    pub fn triplet(&self, source: impl Into<String>) -> Result<Triplet, TrainError> {
        Triplet::new(self.render(0.0), self.render(0.5), self.render(1.0), source)?
            .with_flows(self.flow(0.0, 1.0), self.flow(1.0, 0.0))
    }
}

/// `count` independent scenes from one seed.
pub fn scenes(cfg: &SceneConfig, count: usize, seed: u64) -> Result<Vec<Scene>, TrainError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| Scene::random(cfg, &mut rng)).collect()
}

pub fn triplets(cfg: &SceneConfig, count: usize, seed: u64) -> Result<Vec<Triplet>, TrainError> {
    scenes(cfg, count, seed)?.iter().enumerate().map(|(i, s)| s.triplet(format!("synthetic#{i}"))).collect()
}
