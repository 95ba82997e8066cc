use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::TrainError;
use crate::codecs::{self, FlowField, Frame};
use crate::flow::{estimate_bidirectional, estimate_flow, flow_stats, mean_flow_magnitude, PyramidConfig};

/// Flows between the outer frames: `forward` maps first to last,
/// `backward` last to first.
#[derive(Clone, Debug, PartialEq)]
pub struct TripletFlows {
    pub forward: FlowField,
    pub backward: FlowField,
}

/// Three consecutive frames; `middle` is the ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct Triplet {
    pub first: Frame,
    pub middle: Frame,
    pub last: Frame,
    pub source: String,
    /// Top-left corner `(x, y)` of this patch in the source frames.
    pub origin: (usize, usize),
    pub flows: Option<TripletFlows>,
}

impl Triplet {
    pub fn new(first: Frame, middle: Frame, last: Frame, source: impl Into<String>) -> Result<Self, TrainError> {
        if !first.same_dims(&middle) || !first.same_dims(&last) {
            return Err(TrainError::Dataset("triplet frames differ in size".into()));
        }
        Ok(Triplet { first, middle, last, source: source.into(), origin: (0, 0), flows: None })
    }

    pub fn with_flows(mut self, forward: FlowField, backward: FlowField) -> Result<Self, TrainError> {
        for f in [&forward, &backward] {
            if f.width() != self.width() || f.height() != self.height() {
                return Err(TrainError::Dataset("flow size does not match the triplet".into()));
            }
        }
        self.flows = Some(TripletFlows { forward, backward });
        Ok(self)
    }

    pub fn width(&self) -> usize {
        self.first.width()
    }

    pub fn height(&self) -> usize {
        self.first.height()
    }

    pub fn crop(&self, x0: usize, y0: usize, width: usize, height: usize) -> Result<Self, TrainError> {
        let flows = match &self.flows {
            Some(f) => Some(TripletFlows {
                forward: f.forward.crop(x0, y0, width, height)?,
                backward: f.backward.crop(x0, y0, width, height)?,
            }),
            None => None,
        };
        Ok(Triplet {
            first: self.first.crop(x0, y0, width, height)?,
            middle: self.middle.crop(x0, y0, width, height)?,
            last: self.last.crop(x0, y0, width, height)?,
            source: self.source.clone(),
            origin: (self.origin.0 + x0, self.origin.1 + y0),
            flows,
        })
    }
}

/// Splits a sequence into non-overlapping windows of three; a trailing
/// partial window is dropped.
pub fn extract_triplets(frames: &[Frame], source: &str) -> Result<Vec<Triplet>, TrainError> {
    if frames.len() < 3 {
        log::warn!("{source}: {} frames, need at least 3 for a triplet", frames.len());
        return Ok(Vec::new());
    }
    if frames.iter().any(|f| !f.same_dims(&frames[0])) {
        return Err(TrainError::Dataset(format!("{source}: frames differ in size")));
    }
    frames
        .chunks_exact(3)
        .enumerate()
        .map(|(i, w)| Triplet::new(w[0].clone(), w[1].clone(), w[2].clone(), format!("{source}#{i}")))
        .collect()
}

fn axis_origins(extent: usize, size: usize, stride: usize) -> Vec<usize> {
    if extent <= size {
        return vec![0];
    }
    (0..=(extent - size) / stride).map(|i| i * stride).collect()
}

/// Square patches of side `size` every `stride` pixels. Frames smaller than
/// `size` along an axis contribute their full extent on that axis.
pub fn extract_patches(t: &Triplet, size: usize, stride: usize) -> Result<Vec<Triplet>, TrainError> {
    if size == 0 || stride == 0 {
        return Err(TrainError::Config("patch size and stride must be positive".into()));
    }
    let (pw, ph) = (size.min(t.width()), size.min(t.height()));
    let mut out = Vec::new();
    for y in axis_origins(t.height(), size, stride) {
        for x in axis_origins(t.width(), size, stride) {
            out.push(t.crop(x, y, pw, ph)?);
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PatchScore {
    pub motion: f64,
    pub detail: f64,
}

/// Mean absolute 3x3 Laplacian response over interior pixels.
fn laplacian_detail(luma: &[f32], w: usize, h: usize) -> f64 {
    if w < 3 || h < 3 {
        return 0.0;
    }
    let mut sum = 0.0f64;
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let i = y * w + x;
            let v = luma[i - w] + luma[i + w] + luma[i - 1] + luma[i + 1] - 4.0 * luma[i];
            sum += (v as f64).abs();
        }
    }
    sum / ((w - 2) * (h - 2)) as f64
}

/// Motion is the mean estimated flow length from first to last frame;
/// detail the Laplacian energy of the middle frame.
pub fn score_patch(t: &Triplet) -> Result<PatchScore, TrainError> {
    let cfg = PyramidConfig::fitted(t.width(), t.height());
    let motion = mean_flow_magnitude(&estimate_flow(&t.first, &t.last, &cfg)?)?;
    let detail = laplacian_detail(&t.middle.luma(), t.width(), t.height());
    Ok(PatchScore { motion, detail })
}

fn competition_ranks(values: &[f64]) -> Vec<usize> {
    values.iter().map(|&v| values.iter().filter(|&&o| o > v).count()).collect()
}

/// Indices of the `count` best candidates. Each candidate's key is its
/// motion rank plus its detail rank (0 = largest); ties keep source order.
pub fn select_patches(scores: &[PatchScore], count: usize) -> Vec<usize> {
    let motion = competition_ranks(&scores.iter().map(|s| s.motion).collect::<Vec<_>>());
    let detail = competition_ranks(&scores.iter().map(|s| s.detail).collect::<Vec<_>>());
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by_key(|&i| (motion[i] + detail[i], i));
    order.truncate(count);
    order
}

/// Estimates missing flows in place.
pub fn ensure_flows(triplets: &mut [Triplet]) -> Result<(), TrainError> {
    triplets.par_iter_mut().filter(|t| t.flows.is_none()).try_for_each(|t| {
        let cfg = PyramidConfig::fitted(t.width(), t.height());
        let (forward, backward) = estimate_bidirectional(&t.first, &t.last, &cfg)?;
        t.flows = Some(TripletFlows { forward, backward });
        Ok(())
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetOptions {
    pub patch_size: usize,
    pub patch_stride: usize,
    /// Keep only this many patches, chosen by [`select_patches`].
    pub select: Option<usize>,
    /// Write estimated flows next to the frames for later runs.
    pub cache_flow: bool,
}

impl Default for DatasetOptions {
    fn default() -> Self {
        DatasetOptions { patch_size: 300, patch_stride: 150, select: None, cache_flow: false }
    }
}

fn list_dir(dir: &Path) -> Result<Vec<PathBuf>, TrainError> {
    let rd = std::fs::read_dir(dir).map_err(|source| TrainError::Io { path: dir.to_path_buf(), source })?;
    let mut out = Vec::new();
    for e in rd {
        out.push(e.map_err(|source| TrainError::Io { path: dir.to_path_buf(), source })?.path());
    }
    out.sort();
    Ok(out)
}

fn sidecar(frame: &Path, kind: &str) -> PathBuf {
    frame.with_extension(format!("{kind}.flo"))
}

fn load_clip(dir: &Path, opts: &DatasetOptions) -> Result<Vec<Triplet>, TrainError> {
    let frames: Vec<PathBuf> =
        list_dir(dir)?.into_iter().filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("ppm"))).collect();
    let images = frames.iter().map(|p| codecs::load_image(p)).collect::<Result<Vec<_>, _>>()?;
    let name = dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let mut triplets = extract_triplets(&images, &name)?;
    for (i, t) in triplets.iter_mut().enumerate() {
        let key = &frames[3 * i];
        let (fwd, bwd) = (sidecar(key, "fwd"), sidecar(key, "bwd"));
        if fwd.exists() && bwd.exists() {
            let (forward, backward) = (codecs::load_flo(&fwd)?, codecs::load_flo(&bwd)?);
            *t = t.clone().with_flows(forward, backward)?;
        }
    }
    let missing: Vec<usize> = (0..triplets.len()).filter(|&i| triplets[i].flows.is_none()).collect();
    ensure_flows(&mut triplets)?;
    if opts.cache_flow {
        for i in missing {
            let key = &frames[3 * i];
            let f = triplets[i].flows.as_ref().expect("flows were just estimated");
            codecs::save_flo(&sidecar(key, "fwd"), &f.forward)?;
            codecs::save_flo(&sidecar(key, "bwd"), &f.backward)?;
        }
    }
    Ok(triplets)
}

/// Loads `<root>/<clip>/NNNNNN.ppm` sequences, flows from `NNNNNN.fwd.flo`
/// and `NNNNNN.bwd.flo` sidecars keyed by each triplet's first frame (or the
/// estimator), then cuts and optionally selects patches.
pub fn load_dataset(root: &Path, opts: &DatasetOptions) -> Result<Vec<Triplet>, TrainError> {
    let mut patches = Vec::new();
    for clip in list_dir(root)?.into_iter().filter(|p| p.is_dir()) {
        for t in load_clip(&clip, opts)? {
            patches.extend(extract_patches(&t, opts.patch_size, opts.patch_stride)?);
        }
    }
    if let Some(count) = opts.select {
        let scores = patches.par_iter().map(score_patch).collect::<Result<Vec<_>, _>>()?;
        let keep = select_patches(&scores, count);
        patches = keep.into_iter().map(|i| patches[i].clone()).collect();
    }
    Ok(patches)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DatasetStats {
    pub triplets: usize,
    pub mean_flow: f64,
    pub max_flow: f64,
    /// Fraction of vectors at least 21 px long.
    pub large_fraction: f64,
}

/// Flow statistics over the forward flows of all triplets.
pub fn dataset_stats(triplets: &[Triplet]) -> Result<DatasetStats, TrainError> {
    let (mut sum, mut max, mut large, mut known) = (0.0, 0.0f64, 0.0, 0usize);
    for t in triplets {
        let f = t.flows.as_ref().ok_or_else(|| TrainError::Dataset(format!("{} has no flow", t.source)))?;
        let s = flow_stats(&f.forward, 21.0)?;
        sum += s.mean * s.known as f64;
        large += s.large_fraction * s.known as f64;
        max = max.max(s.max);
        known += s.known;
    }
    if known == 0 {
        return Err(TrainError::EmptyDataset);
    }
    Ok(DatasetStats {
        triplets: triplets.len(),
        mean_flow: sum / known as f64,
        max_flow: max,
        large_fraction: large / known as f64,
    })
}
