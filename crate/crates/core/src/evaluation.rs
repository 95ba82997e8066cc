//! PSNR and SSIM, and a harness scoring the model against the blending
//! baselines.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;

use crate::codecs::{self, CodecError, FlowField, Frame};
use crate::context::ContextMap;
use crate::flow::{estimate_bidirectional, FlowError, PyramidConfig};
use crate::synthesis::{interpolate, Model, ModelError};
use crate::warping::{blend_baseline, forward_blend, prewarp_pair, WarpError, DEFAULT_TAU};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("image sizes differ: {0}x{1} vs {2}x{3}")]
    Dims(usize, usize, usize, usize),
    #[error("SSIM needs at least 11x11 pixels, got {0}x{1}")]
    TooSmall(usize, usize),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Warp(#[from] WarpError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("malformed report: {0}")]
    Report(String),
    #[error("{}: {source}", path.display())]
    Io { path: std::path::PathBuf, source: std::io::Error },
}

fn check_dims(a: &Frame, b: &Frame) -> Result<(), EvalError> {
    if a.same_dims(b) {
        Ok(())
    } else {
        Err(EvalError::Dims(a.width(), a.height(), b.width(), b.height()))
    }
}

/// `10 log10(1 / mse)` over all RGB values; `+inf` for identical images.
pub fn psnr(a: &Frame, b: &Frame) -> Result<f64, EvalError> {
    check_dims(a, b)?;
    let sse: f64 = a.data().iter().zip(b.data()).map(|(&x, &y)| (x as f64 - y as f64).powi(2)).sum();
    if sse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (a.data().len() as f64 / sse).log10())
}

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let r = (SSIM_WINDOW / 2) as f64;
    let g: [f64; SSIM_WINDOW] = std::array::from_fn(|i| (-((i as f64 - r).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp());
    let s: f64 = g.iter().sum();
    g.map(|v| v / s)
}

/// Valid-mode separable filtering of a `w x h` plane.
fn filter_valid(src: &[f64], w: usize, h: usize, k: &[f64]) -> Vec<f64> {
    let n = k.len();
    let (wo, ho) = (w - n + 1, h - n + 1);
    let mut rows = vec![0.0; wo * h];
    for y in 0..h {
        for x in 0..wo {
            rows[y * wo + x] = (0..n).map(|i| k[i] * src[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; wo * ho];
    for y in 0..ho {
        for x in 0..wo {
            out[y * wo + x] = (0..n).map(|i| k[i] * rows[(y + i) * wo + x]).sum();
        }
    }
    out
}

/// Single-scale SSIM on Rec.601 luma with an 11x11 Gaussian window
/// (sigma 1.5), averaged over every position where the window fits.
pub fn ssim(a: &Frame, b: &Frame) -> Result<f64, EvalError> {
    check_dims(a, b)?;
    let (w, h) = (a.width(), a.height());
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(EvalError::TooSmall(w, h));
    }
    let la: Vec<f64> = a.luma().iter().map(|&v| v as f64).collect();
    let lb: Vec<f64> = b.luma().iter().map(|&v| v as f64).collect();
    let k = gaussian_window();
    let f = |v: Vec<f64>| filter_valid(&v, w, h, &k);
    let ma = f(la.clone());
    let mb = f(lb.clone());
    let saa = f(la.iter().map(|v| v * v).collect());
    let sbb = f(lb.iter().map(|v| v * v).collect());
    let sab = f(la.iter().zip(&lb).map(|(x, y)| x * y).collect());
    let mut total = 0.0;
    for i in 0..ma.len() {
        let (mx, my) = (ma[i], mb[i]);
        let (vx, vy, cxy) = (saa[i] - mx * mx, sbb[i] - my * my, sab[i] - mx * my);
        total += ((2.0 * mx * my + SSIM_C1) * (2.0 * cxy + SSIM_C2))
            / ((mx * mx + my * my + SSIM_C1) * (vx + vy + SSIM_C2));
    }
    Ok(total / ma.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Model,
    BidirectionalBlend,
    ForwardBlend,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Model, Method::BidirectionalBlend, Method::ForwardBlend];

    pub fn label(self) -> &'static str {
        match self {
            Method::Model => "model",
            Method::BidirectionalBlend => "bidirectional-blend",
            Method::ForwardBlend => "forward-blend",
        }
    }

    pub fn from_label(s: &str) -> Option<Method> {
        Method::ALL.into_iter().find(|m| m.label() == s)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalRow {
    pub example: String,
    pub method: Method,
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
}

pub const CSV_HEADER: &str = "example,method,psnr_db,ssim";

impl EvalReport {
    /// Mean PSNR and SSIM of one method, if it has rows.
    pub fn mean(&self, method: Method) -> Option<(f64, f64)> {
        let rows: Vec<&EvalRow> = self.rows.iter().filter(|r| r.method == method).collect();
        if rows.is_empty() {
            return None;
        }
        let n = rows.len() as f64;
        Some((rows.iter().map(|r| r.psnr).sum::<f64>() / n, rows.iter().map(|r| r.ssim).sum::<f64>() / n))
    }

    pub fn to_csv(&self) -> String {
        let mut s = format!("{CSV_HEADER}\n");
        for r in &self.rows {
            let _ = writeln!(s, "{},{},{},{}", r.example, r.method.label(), r.psnr, r.ssim);
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self, EvalError> {
        let mut lines = text.lines();
        if lines.next() != Some(CSV_HEADER) {
            return Err(EvalError::Report(format!("header must be \"{CSV_HEADER}\"")));
        }
        let mut rows = Vec::new();
        for (i, line) in lines.enumerate().filter(|(_, l)| !l.is_empty()) {
            let bad = || EvalError::Report(format!("line {}: \"{line}\"", i + 2));
            let f: Vec<&str> = line.rsplitn(4, ',').collect();
            if f.len() != 4 {
                return Err(bad());
            }
            rows.push(EvalRow {
                example: f[3].to_string(),
                method: Method::from_label(f[2]).ok_or_else(bad)?,
                psnr: f[1].parse().map_err(|_| bad())?,
                ssim: f[0].parse().map_err(|_| bad())?,
            });
        }
        Ok(EvalReport { rows })
    }

    /// Per-example rows followed by one mean row per method.
    pub fn to_table(&self) -> String {
        let width = self.rows.iter().map(|r| r.example.len()).max().unwrap_or(0).max("example".len());
        let mut s = format!("{:<width$}  {:<19}  {:>9}  {:>7}\n", "example", "method", "PSNR(dB)", "SSIM");
        for r in &self.rows {
            let _ = writeln!(s, "{:<width$}  {:<19}  {:>9.3}  {:>7.4}", r.example, r.method.label(), r.psnr, r.ssim);
        }
        for m in Method::ALL {
            if let Some((p, q)) = self.mean(m) {
                let _ = writeln!(s, "{:<width$}  {:<19}  {:>9.3}  {:>7.4}", "mean", m.label(), p, q);
            }
        }
        s
    }
}

/// An input pair with its ground-truth middle frame.
#[derive(Clone, Debug)]
pub struct EvalExample {
    pub name: String,
    pub first: Frame,
    pub second: Frame,
    pub ground_truth: Option<Frame>,
    /// `(first -> second, second -> first)`; estimated when absent.
    pub flows: Option<(FlowField, FlowField)>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalOptions {
    pub t: f64,
    pub tau: f64,
    pub baselines: bool,
    /// Feed zeros in place of the warped context maps.
    pub zero_context: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions { t: 0.5, tau: DEFAULT_TAU, baselines: true, zero_context: false }
    }
}

fn clamped(f: &Frame) -> Frame {
    let mut out = f.clone();
    out.data_mut().iter_mut().for_each(|v| *v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) });
    out
}

fn score(example: &str, method: Method, pred: &Frame, gt: &Frame) -> Result<EvalRow, EvalError> {
    let pred = clamped(pred);
    Ok(EvalRow { example: example.to_string(), method, psnr: psnr(&pred, gt)?, ssim: ssim(&pred, gt)? })
}

fn evaluate_one(ex: &EvalExample, model: Option<&Model>, opts: &EvalOptions) -> Result<Vec<EvalRow>, EvalError> {
    let Some(gt) = &ex.ground_truth else {
        log::warn!("{}: no ground truth, skipped", ex.name);
        return Ok(Vec::new());
    };
    check_dims(&ex.first, &ex.second)?;
    check_dims(&ex.first, gt)?;
    let (f12, f21) = match &ex.flows {
        Some(f) => f.clone(),
        None => estimate_bidirectional(&ex.first, &ex.second, &PyramidConfig::fitted(ex.first.width(), ex.first.height()))?,
    };
    let mut rows = Vec::new();
    let bundles = match model {
        Some(m) => {
            let out = interpolate(&ex.first, &ex.second, &f12, &f21, opts.t, opts.tau, m, opts.zero_context)?;
            rows.push(score(&ex.name, Method::Model, &out.frame, gt)?);
            out.bundles
        }
        None => {
            let zero = ContextMap::zeros(ex.first.width(), ex.first.height());
            prewarp_pair(&ex.first, &ex.second, &zero, &zero, &f12, &f21, opts.t, opts.tau)?
        }
    };
    if opts.baselines {
        let blend = blend_baseline(&bundles.0, &bundles.1, opts.t)?;
        rows.push(score(&ex.name, Method::BidirectionalBlend, &blend, gt)?);
        rows.push(score(&ex.name, Method::ForwardBlend, &forward_blend(&bundles.0), gt)?);
    }
    Ok(rows)
}

/// Scores every example with ground truth; rows keep example order.
pub fn evaluate(examples: &[EvalExample], model: Option<&Model>, opts: &EvalOptions) -> Result<EvalReport, EvalError> {
    let per: Vec<Vec<EvalRow>> =
        examples.par_iter().map(|ex| evaluate_one(ex, model, opts)).collect::<Result<_, _>>()?;
    Ok(EvalReport { rows: per.into_iter().flatten().collect() })
}

/// Reads `<root>/<example>/{first.ppm, second.ppm, gt.ppm, fwd.flo, bwd.flo}`;
/// the ground truth and flows are optional.
pub fn load_pairs(root: &Path) -> Result<Vec<EvalExample>, EvalError> {
    let io = |source| EvalError::Io { path: root.to_path_buf(), source };
    let mut dirs = Vec::new();
    for e in std::fs::read_dir(root).map_err(io)? {
        let p = e.map_err(io)?.path();
        if p.is_dir() {
            dirs.push(p);
        }
    }
    dirs.sort();
    let mut out = Vec::new();
    for d in dirs {
        let name = d.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        let gt = d.join("gt.ppm");
        let (fwd, bwd) = (d.join("fwd.flo"), d.join("bwd.flo"));
        out.push(EvalExample {
            first: codecs::load_image(&d.join("first.ppm"))?,
            second: codecs::load_image(&d.join("second.ppm"))?,
            ground_truth: if gt.exists() { Some(codecs::load_image(&gt)?) } else { None },
            flows: if fwd.exists() && bwd.exists() { Some((codecs::load_flo(&fwd)?, codecs::load_flo(&bwd)?)) } else { None },
            name,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn random_frame(w: usize, h: usize, rng: &mut ChaCha8Rng) -> Frame {
        Frame::from_fn(w, h, |_, _, _| rng.random::<f32>())
    }

    // Direct per-window SSIM with the 2-D Gaussian written out.
    fn ssim_oracle(a: &Frame, b: &Frame) -> f64 {
        let (w, h) = (a.width(), a.height());
        let (la, lb) = (a.luma(), b.luma());
        let mut g = [[0.0f64; 11]; 11];
        let mut s = 0.0;
        for (i, row) in g.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                let d = ((i as f64 - 5.0).powi(2) + (j as f64 - 5.0).powi(2)) / (2.0 * 1.5 * 1.5);
                *v = (-d).exp();
                s += *v;
            }
        }
        let mut total = 0.0;
        let mut count = 0;
        for y in 0..=h - 11 {
            for x in 0..=w - 11 {
                let (mut ma, mut mb, mut aa, mut bb, mut ab) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for i in 0..11 {
                    for j in 0..11 {
                        let wgt = g[i][j] / s;
                        let p = la[(y + i) * w + x + j] as f64;
                        let q = lb[(y + i) * w + x + j] as f64;
                        ma += wgt * p;
                        mb += wgt * q;
                        aa += wgt * p * p;
                        bb += wgt * q * q;
                        ab += wgt * p * q;
                    }
                }
                let (va, vb, cab) = (aa - ma * ma, bb - mb * mb, ab - ma * mb);
                total += ((2.0 * ma * mb + SSIM_C1) * (2.0 * cab + SSIM_C2)) / ((ma * ma + mb * mb + SSIM_C1) * (va + vb + SSIM_C2));
                count += 1;
            }
        }
        total / count as f64
    }

    #[test]
    fn psnr_of_identical_frames_is_infinite() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random_frame(8, 6, &mut rng);
        assert_eq!(psnr(&a, &a).unwrap(), f64::INFINITY);
    }

    #[test]
    fn psnr_of_uniform_offset() {
        let a = Frame::filled(16, 16, [0.25, 0.5, 0.125]);
        let b = Frame::filled(16, 16, [0.35, 0.6, 0.225]);
        assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-5);
    }

    #[test]
    fn psnr_matches_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (a, b) = (random_frame(13, 9, &mut rng), random_frame(13, 9, &mut rng));
        let mut sse = 0.0;
        for c in 0..3 {
            for y in 0..9 {
                for x in 0..13 {
                    sse += (a.get(c, y, x) as f64 - b.get(c, y, x) as f64).powi(2);
                }
            }
        }
        let want = 10.0 * (1.0 / (sse / (3.0 * 13.0 * 9.0))).log10();
        assert!((psnr(&a, &b).unwrap() - want).abs() < 1e-9);
    }

    #[test]
    fn ssim_of_identical_frames_is_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_frame(20, 16, &mut rng);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ssim_of_constant_frames_matches_closed_form() {
        let a = Frame::filled(16, 14, [0.2, 0.2, 0.2]);
        let b = Frame::filled(16, 14, [0.7, 0.7, 0.7]);
        let (ma, mb) = (a.luma()[0] as f64, b.luma()[0] as f64);
        let want = (2.0 * ma * mb + SSIM_C1) * SSIM_C2 / ((ma * ma + mb * mb + SSIM_C1) * SSIM_C2);
        assert!((ssim(&a, &b).unwrap() - want).abs() < 1e-9);
    }

    #[test]
    fn ssim_matches_direct_windows() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..3 {
            let (a, b) = (random_frame(19, 15, &mut rng), random_frame(19, 15, &mut rng));
            assert!((ssim(&a, &b).unwrap() - ssim_oracle(&a, &b)).abs() < 1e-9);
        }
    }

    #[test]
    fn metrics_are_symmetric_and_flip_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (a, b) = (random_frame(17, 12, &mut rng), random_frame(17, 12, &mut rng));
        assert_eq!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
        assert!((ssim(&a, &b).unwrap() - ssim(&b, &a).unwrap()).abs() < 1e-9);
        let (fa, fb) = (a.flip_horizontal(), b.flip_horizontal());
        assert!((psnr(&fa, &fb).unwrap() - psnr(&a, &b).unwrap()).abs() < 1e-9);
        assert!((ssim(&fa, &fb).unwrap() - ssim(&a, &b).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn ssim_rejects_small_frames() {
        let a = Frame::filled(10, 20, [0.5; 3]);
        assert!(matches!(ssim(&a, &a), Err(EvalError::TooSmall(10, 20))));
    }

    #[test]
    fn csv_round_trip() {
        let report = EvalReport {
            rows: vec![
                EvalRow { example: "a,b".into(), method: Method::Model, psnr: f64::INFINITY, ssim: 1.0 },
                EvalRow { example: "c".into(), method: Method::ForwardBlend, psnr: 23.125_678_9, ssim: 0.812_345_678_9 },
            ],
        };
        let csv = report.to_csv();
        assert!(csv.starts_with("example,method,psnr_db,ssim\n"));
        assert_eq!(EvalReport::from_csv(&csv).unwrap(), report);
        assert!(report.to_table().contains("forward-blend"));
    }

    #[test]
    fn rigged_identical_example_scores_perfectly() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let f = random_frame(16, 16, &mut rng);
        let ex = EvalExample {
            name: "static".into(),
            first: f.clone(),
            second: f.clone(),
            ground_truth: Some(f.clone()),
            flows: Some((FlowField::zeros(16, 16), FlowField::zeros(16, 16))),
        };
        let report = evaluate(&[ex], None, &EvalOptions::default()).unwrap();
        assert_eq!(report.rows.len(), 2);
        for r in &report.rows {
            assert_eq!(r.psnr, f64::INFINITY);
            assert!((r.ssim - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn examples_without_ground_truth_are_skipped() {
        let f = Frame::filled(16, 16, [0.5; 3]);
        let ex = EvalExample {
            name: "x".into(),
            first: f.clone(),
            second: f,
            ground_truth: None,
            flows: Some((FlowField::zeros(16, 16), FlowField::zeros(16, 16))),
        };
        assert!(evaluate(&[ex], None, &EvalOptions::default()).unwrap().rows.is_empty());
    }
}
