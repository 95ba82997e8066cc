use super::Real;

/// Normalized scatter from a source pixel grid onto a target grid.
///
/// Each target row stores its contributing `(source, weight)` pairs sorted by
/// source index together with the total weight. Applying the map accumulates
/// `sum(weight * value)` in 64-bit and divides by the total; targets whose
/// total is below the hole threshold produce exactly zero.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseMap {
    sources: usize,
    offsets: Vec<usize>,
    cols: Vec<u32>,
    weights: Vec<f64>,
    totals: Vec<f64>,
    threshold: f64,
}

impl SparseMap {
    /// Builds a map from unordered `(target, source, weight)` triples.
    /// The result does not depend on the order of `entries`.
    pub fn from_entries(sources: usize, targets: usize, threshold: f64, entries: &[(u32, u32, f64)]) -> Self {
        let mut offsets = vec![0usize; targets + 1];
        for &(t, _, _) in entries {
            offsets[t as usize + 1] += 1;
        }
        for i in 0..targets {
            offsets[i + 1] += offsets[i];
        }
        let mut fill = offsets.clone();
        let mut slots = vec![(0u32, 0.0f64); entries.len()];
        for &(t, s, w) in entries {
            slots[fill[t as usize]] = (s, w);
            fill[t as usize] += 1;
        }
        for t in 0..targets {
            slots[offsets[t]..offsets[t + 1]].sort_unstable_by_key(|&(s, _)| s);
        }
        let (cols, weights): (Vec<u32>, Vec<f64>) = slots.into_iter().unzip();
        let totals = (0..targets).map(|t| weights[offsets[t]..offsets[t + 1]].iter().sum()).collect();
        SparseMap { sources, offsets, cols, weights, totals, threshold }
    }

    pub fn identity(pixels: usize) -> Self {
        SparseMap {
            sources: pixels,
            offsets: (0..=pixels).collect(),
            cols: (0..pixels as u32).collect(),
            weights: vec![1.0; pixels],
            totals: vec![1.0; pixels],
            threshold: 0.0,
        }
    }

    pub fn sources(&self) -> usize {
        self.sources
    }

    pub fn targets(&self) -> usize {
        self.totals.len()
    }

    /// Accumulated weight per target.
    pub fn totals(&self) -> &[f64] {
        &self.totals
    }

    pub fn is_hole(&self, target: usize) -> bool {
        self.totals[target] < self.threshold || self.totals[target] == 0.0
    }

    /// Contributions `(source, weight)` to one target, sorted by source.
    pub fn row(&self, target: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.offsets[target]..self.offsets[target + 1];
        self.cols[r.clone()].iter().map(|&s| s as usize).zip(self.weights[r].iter().copied())
    }

    pub fn apply<T: Real>(&self, src: &[T], dst: &mut [T]) {
        for (t, out) in dst.iter_mut().enumerate() {
            *out = if self.is_hole(t) {
                T::zero()
            } else {
                let acc: f64 = self.row(t).map(|(s, w)| w * src[s].as_f64()).sum();
                T::of(acc / self.totals[t])
            };
        }
    }

    pub fn apply_transpose<T: Real>(&self, g: &[T], dst: &mut [T]) {
        let mut acc = vec![0.0f64; self.sources];
        for (t, gv) in g.iter().enumerate() {
            if self.is_hole(t) {
                continue;
            }
            let scale = gv.as_f64() / self.totals[t];
            for (s, w) in self.row(t) {
                acc[s] += w * scale;
            }
        }
        dst.iter_mut().zip(acc).for_each(|(d, a)| *d = T::of(a));
    }
}
