//! Forward and backward kernels shared by the tape and the eager evaluator.

use rayon::prelude::*;

use super::{shape_err, Real, SparseMap, Tensor, TensorError};

/// Output pixels handled per im2col tile. Fixed so the work split, and with it
/// every floating-point reduction, is independent of the worker count.
const TILE_COLS: usize = 1024;

pub(crate) const NORM_STD_FLOOR: f64 = 1e-8;

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub o: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeom {
    pub fn new<T: Real>(
        x: &Tensor<T>,
        w: &Tensor<T>,
        b: Option<&Tensor<T>>,
        stride: usize,
        pad: usize,
    ) -> Result<Self, TensorError> {
        let (n, c, h, wd) = x.dims4("conv2d")?;
        let (o, i, kh, kw) = match w.shape()[..] {
            [o, i, kh, kw] => (o, i, kh, kw),
            _ => return Err(shape_err("conv2d", format!("weight must be 4-D OIKhKw, got {:?}", w.shape()))),
        };
        if i != c {
            return Err(shape_err("conv2d", format!("input channels {c} != weight in-channels {i}")));
        }
        if stride == 0 {
            return Err(shape_err("conv2d", "stride must be at least 1"));
        }
        if let Some(b) = b {
            if b.numel() != o {
                return Err(shape_err("conv2d", format!("bias length {} != out-channels {o}", b.numel())));
            }
        }
        if h + 2 * pad < kh {
            return Err(shape_err("conv2d", format!("height {h} + 2*{pad} smaller than kernel {kh}")));
        }
        if wd + 2 * pad < kw {
            return Err(shape_err("conv2d", format!("width {wd} + 2*{pad} smaller than kernel {kw}")));
        }
        let ho = (h + 2 * pad - kh) / stride + 1;
        let wo = (wd + 2 * pad - kw) / stride + 1;
        Ok(ConvGeom { n, c, h, w: wd, o, kh, kw, stride, pad, ho, wo })
    }

    fn k(&self) -> usize {
        self.c * self.kh * self.kw
    }

    /// Row ranges of the output plane, one per tile.
    fn row_tiles(&self) -> Vec<(usize, usize)> {
        let rows = (TILE_COLS / self.wo).max(1);
        (0..self.ho).step_by(rows).map(|r0| (r0, (r0 + rows).min(self.ho))).collect()
    }
}

fn im2col<T: Real>(x: &[T], g: &ConvGeom, r0: usize, r1: usize, col: &mut [T]) {
    let ncols = (r1 - r0) * g.wo;
    let mut k = 0;
    for c in 0..g.c {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = &mut col[k * ncols..(k + 1) * ncols];
                let mut j = 0;
                for oy in r0..r1 {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        row[j..j + g.wo].fill(T::zero());
                        j += g.wo;
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..g.wo {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        row[j] = if ix < 0 || ix >= g.w as isize { T::zero() } else { src[ix as usize] };
                        j += 1;
                    }
                }
                k += 1;
            }
        }
    }
}

fn col2im<T: Real>(col: &[T], g: &ConvGeom, r0: usize, r1: usize, dx: &mut [T]) {
    let ncols = (r1 - r0) * g.wo;
    let mut k = 0;
    for c in 0..g.c {
        let plane = &mut dx[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = &col[k * ncols..(k + 1) * ncols];
                let mut j = 0;
                for oy in r0..r1 {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        j += g.wo;
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..g.wo {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dst[ix as usize] += row[j];
                        }
                        j += 1;
                    }
                }
                k += 1;
            }
        }
    }
}

/// Zero-padded 2-D convolution (cross-correlation) of an NCHW input with an
/// OIKhKw weight.
pub fn conv2d<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: Option<&Tensor<T>>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>, TensorError> {
    let g = ConvGeom::new(x, w, b, stride, pad)?;
    let k = g.k();
    let in_len = g.c * g.h * g.w;
    let out_plane = g.ho * g.wo;
    let tiles: Vec<(usize, usize, usize)> =
        (0..g.n).flat_map(|i| g.row_tiles().into_iter().map(move |(r0, r1)| (i, r0, r1))).collect();
    let xd = x.data();
    let wd = w.data();
    let parts: Vec<Vec<T>> = tiles
        .par_iter()
        .map(|&(i, r0, r1)| {
            let ncols = (r1 - r0) * g.wo;
            let mut col = vec![T::zero(); k * ncols];
            im2col(&xd[i * in_len..(i + 1) * in_len], &g, r0, r1, &mut col);
            let mut out = vec![T::zero(); g.o * ncols];
            if let Some(b) = b {
                for (o, chunk) in out.chunks_mut(ncols).enumerate() {
                    chunk.fill(b.data()[o]);
                }
            }
            // SAFETY: buffers sized above; strides describe dense row-major matrices.
            unsafe {
                T::gemm(
                    g.o,
                    k,
                    ncols,
                    T::one(),
                    wd.as_ptr(),
                    k as isize,
                    1,
                    col.as_ptr(),
                    ncols as isize,
                    1,
                    if b.is_some() { T::one() } else { T::zero() },
                    out.as_mut_ptr(),
                    ncols as isize,
                    1,
                );
            }
            out
        })
        .collect();
    let mut data = vec![T::zero(); g.n * g.o * out_plane];
    for (&(i, r0, r1), part) in tiles.iter().zip(&parts) {
        let ncols = (r1 - r0) * g.wo;
        for o in 0..g.o {
            let dst = (i * g.o + o) * out_plane + r0 * g.wo;
            data[dst..dst + ncols].copy_from_slice(&part[o * ncols..(o + 1) * ncols]);
        }
    }
    Tensor::new(vec![g.n, g.o, g.ho, g.wo], data)
}

pub(crate) struct ConvGrads<T> {
    pub dx: Option<Tensor<T>>,
    pub dw: Option<Tensor<T>>,
    pub db: Tensor<T>,
}

pub(crate) fn conv2d_backward<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    dy: &Tensor<T>,
    stride: usize,
    pad: usize,
    need_dx: bool,
    need_dw: bool,
) -> Result<ConvGrads<T>, TensorError> {
    let g = ConvGeom::new(x, w, None, stride, pad)?;
    let k = g.k();
    let in_len = g.c * g.h * g.w;
    let out_plane = g.ho * g.wo;
    let tiles = g.row_tiles();
    let xd = x.data();
    let wd = w.data();
    let dyd = dy.data();

    let per_sample: Vec<(Option<Vec<T>>, Option<Vec<T>>, Vec<T>)> = (0..g.n)
        .into_par_iter()
        .map(|i| {
            let xs = &xd[i * in_len..(i + 1) * in_len];
            let dys = &dyd[i * g.o * out_plane..(i + 1) * g.o * out_plane];
            let mut dw = need_dw.then(|| vec![T::zero(); g.o * k]);
            let mut dx = need_dx.then(|| vec![T::zero(); in_len]);
            for &(r0, r1) in &tiles {
                let ncols = (r1 - r0) * g.wo;
                let dy_tile = dys[r0 * g.wo..].as_ptr();
                if let Some(dw) = dw.as_mut() {
                    let mut col = vec![T::zero(); k * ncols];
                    im2col(xs, &g, r0, r1, &mut col);
                    // SAFETY: dy tile rows have stride `out_plane` inside `dys`.
                    unsafe {
                        T::gemm(
                            g.o,
                            ncols,
                            k,
                            T::one(),
                            dy_tile,
                            out_plane as isize,
                            1,
                            col.as_ptr(),
                            1,
                            ncols as isize,
                            T::one(),
                            dw.as_mut_ptr(),
                            k as isize,
                            1,
                        );
                    }
                }
                if let Some(dx) = dx.as_mut() {
                    let mut dcol = vec![T::zero(); k * ncols];
                    // SAFETY: as above; the weight is read transposed.
                    unsafe {
                        T::gemm(
                            k,
                            g.o,
                            ncols,
                            T::one(),
                            wd.as_ptr(),
                            1,
                            k as isize,
                            dy_tile,
                            out_plane as isize,
                            1,
                            T::zero(),
                            dcol.as_mut_ptr(),
                            ncols as isize,
                            1,
                        );
                    }
                    col2im(&dcol, &g, r0, r1, dx);
                }
            }
            let db: Vec<T> = (0..g.o)
                .map(|o| T::of(dys[o * out_plane..(o + 1) * out_plane].iter().map(|v| v.as_f64()).sum()))
                .collect();
            (dx, dw, db)
        })
        .collect();

    let mut dx_all = need_dx.then(|| Vec::with_capacity(g.n * in_len));
    let mut dw_sum = need_dw.then(|| vec![T::zero(); g.o * k]);
    let mut db_sum = vec![T::zero(); g.o];
    for (dx, dw, db) in per_sample {
        if let (Some(all), Some(dx)) = (dx_all.as_mut(), dx) {
            all.extend_from_slice(&dx);
        }
        if let (Some(sum), Some(dw)) = (dw_sum.as_mut(), dw) {
            sum.iter_mut().zip(&dw).for_each(|(s, v)| *s += *v);
        }
        db_sum.iter_mut().zip(&db).for_each(|(s, v)| *s += *v);
    }
    Ok(ConvGrads {
        dx: dx_all.map(|d| Tensor::new(x.shape().to_vec(), d)).transpose()?,
        dw: dw_sum.map(|d| Tensor::new(w.shape().to_vec(), d)).transpose()?,
        db: Tensor::new(vec![g.o], db_sum)?,
    })
}

/// Resize factor supported by [`bilinear_resize`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scale {
    Up2,
    Down2,
}

/// Per-output-index `(i0, i1, weight_of_i1)` for half-pixel-centred bilinear
/// sampling with edge clamping.
fn resize_taps(in_len: usize, out_len: usize) -> Vec<(usize, usize, f64)> {
    let ratio = in_len as f64 / out_len as f64;
    (0..out_len)
        .map(|o| {
            let src = ((o as f64 + 0.5) * ratio - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(in_len - 1);
            let i1 = (i0 + 1).min(in_len - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

fn resize_dims(h: usize, w: usize, scale: Scale) -> Result<(usize, usize), TensorError> {
    match scale {
        Scale::Up2 => Ok((h * 2, w * 2)),
        Scale::Down2 => {
            if !h.is_multiple_of(2) || !w.is_multiple_of(2) {
                return Err(shape_err("bilinear_resize", format!("odd extent {h}x{w} cannot be halved")));
            }
            Ok((h / 2, w / 2))
        }
    }
}

/// Bilinear resize by a factor of two with the half-pixel sample convention.
pub fn bilinear_resize<T: Real>(x: &Tensor<T>, scale: Scale) -> Result<Tensor<T>, TensorError> {
    let (n, c, h, w) = x.dims4("bilinear_resize")?;
    let (ho, wo) = resize_dims(h, w, scale)?;
    let ty = resize_taps(h, ho);
    let tx = resize_taps(w, wo);
    let mut out = vec![T::zero(); n * c * ho * wo];
    out.par_chunks_mut(ho * wo).zip(x.data().par_chunks(h * w)).for_each(|(dst, src)| {
        for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
            for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                let a = src[y0 * w + x0].as_f64();
                let b = src[y0 * w + x1].as_f64();
                let c = src[y1 * w + x0].as_f64();
                let d = src[y1 * w + x1].as_f64();
                let top = a + (b - a) * fx;
                let bot = c + (d - c) * fx;
                dst[oy * wo + ox] = T::of(top + (bot - top) * fy);
            }
        }
    });
    Tensor::new(vec![n, c, ho, wo], out)
}

pub(crate) fn bilinear_resize_backward<T: Real>(
    in_shape: &[usize],
    dy: &Tensor<T>,
    scale: Scale,
) -> Result<Tensor<T>, TensorError> {
    let (h, w) = (in_shape[2], in_shape[3]);
    let (ho, wo) = resize_dims(h, w, scale)?;
    let ty = resize_taps(h, ho);
    let tx = resize_taps(w, wo);
    let mut dx = vec![T::zero(); in_shape.iter().product()];
    dx.par_chunks_mut(h * w).zip(dy.data().par_chunks(ho * wo)).for_each(|(dst, g)| {
        for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
            for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                let v = g[oy * wo + ox].as_f64();
                dst[y0 * w + x0] += T::of(v * (1.0 - fy) * (1.0 - fx));
                dst[y0 * w + x1] += T::of(v * (1.0 - fy) * fx);
                dst[y1 * w + x0] += T::of(v * fy * (1.0 - fx));
                dst[y1 * w + x1] += T::of(v * fy * fx);
            }
        }
    });
    Tensor::new(in_shape.to_vec(), dx)
}

const BINOMIAL5: [f64; 5] = [1.0 / 16.0, 4.0 / 16.0, 6.0 / 16.0, 4.0 / 16.0, 1.0 / 16.0];

/// Mirror an index into `[0, n)` without repeating the edge sample.
pub(crate) fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let n = n as isize;
    let mut i = i;
    while i < 0 || i >= n {
        i = if i < 0 { -i } else { 2 * (n - 1) - i };
    }
    i as usize
}

fn gauss_taps(len: usize) -> (usize, Vec<[usize; 5]>) {
    let out = len.div_ceil(2);
    let taps = (0..out)
        .map(|o| std::array::from_fn(|a| reflect(2 * o as isize + a as isize - 2, len)))
        .collect();
    (out, taps)
}

/// 5x5 binomial blur with reflection padding followed by keeping every
/// second sample (one Gaussian-pyramid reduction step).
pub(crate) fn gauss_down<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
    let (n, c, h, w) = x.dims4("gauss_down")?;
    let (ho, ty) = gauss_taps(h);
    let (wo, tx) = gauss_taps(w);
    let mut out = vec![T::zero(); n * c * ho * wo];
    out.par_chunks_mut(ho * wo).zip(x.data().par_chunks(h * w)).for_each(|(dst, src)| {
        let mut tmp = vec![0.0f64; ho * w];
        for (oy, rows) in ty.iter().enumerate() {
            for xx in 0..w {
                tmp[oy * w + xx] = rows.iter().zip(BINOMIAL5).map(|(&r, k)| k * src[r * w + xx].as_f64()).sum();
            }
        }
        for oy in 0..ho {
            for (ox, cols) in tx.iter().enumerate() {
                dst[oy * wo + ox] = T::of(cols.iter().zip(BINOMIAL5).map(|(&cc, k)| k * tmp[oy * w + cc]).sum());
            }
        }
    });
    Tensor::new(vec![n, c, ho, wo], out)
}

pub(crate) fn gauss_down_backward<T: Real>(in_shape: &[usize], dy: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
    let (h, w) = (in_shape[2], in_shape[3]);
    let (ho, ty) = gauss_taps(h);
    let (wo, tx) = gauss_taps(w);
    let mut dx = vec![T::zero(); in_shape.iter().product()];
    dx.par_chunks_mut(h * w).zip(dy.data().par_chunks(ho * wo)).for_each(|(dst, g)| {
        let mut tmp = vec![0.0f64; ho * w];
        for oy in 0..ho {
            for (ox, cols) in tx.iter().enumerate() {
                let v = g[oy * wo + ox].as_f64();
                for (&cc, k) in cols.iter().zip(BINOMIAL5) {
                    tmp[oy * w + cc] += k * v;
                }
            }
        }
        let mut acc = vec![0.0f64; h * w];
        for (oy, rows) in ty.iter().enumerate() {
            for xx in 0..w {
                let v = tmp[oy * w + xx];
                for (&r, k) in rows.iter().zip(BINOMIAL5) {
                    acc[r * w + xx] += k * v;
                }
            }
        }
        dst.iter_mut().zip(acc).for_each(|(d, a)| *d = T::of(a));
    });
    Tensor::new(in_shape.to_vec(), dx)
}

fn channel_of(index: usize, c: usize, plane: usize) -> usize {
    (index / plane) % c
}

fn channels_and_plane<T: Real>(x: &Tensor<T>) -> (usize, usize) {
    let s = x.shape();
    if s.len() >= 2 {
        (s[1], s[2..].iter().product())
    } else {
        (1, 1)
    }
}

pub(crate) fn prelu<T: Real>(x: &Tensor<T>, slope: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
    let (c, plane) = channels_and_plane(x);
    if x.shape().len() < 2 || slope.numel() != c {
        return Err(shape_err(
            "prelu",
            format!("slope length {} != channel count of input {:?}", slope.numel(), x.shape()),
        ));
    }
    let s = slope.data();
    let data = x
        .data()
        .iter()
        .enumerate()
        .map(|(i, &v)| if v >= T::zero() { v } else { s[channel_of(i, c, plane)] * v })
        .collect();
    Tensor::new(x.shape().to_vec(), data)
}

pub(crate) fn prelu_backward<T: Real>(x: &Tensor<T>, slope: &Tensor<T>, dy: &Tensor<T>) -> (Tensor<T>, Tensor<T>) {
    let (c, plane) = channels_and_plane(x);
    let s = slope.data();
    let mut ds = vec![0.0f64; c];
    let dx = x
        .data()
        .iter()
        .zip(dy.data())
        .enumerate()
        .map(|(i, (&v, &g))| {
            if v >= T::zero() {
                g
            } else {
                let ch = channel_of(i, c, plane);
                ds[ch] += (g * v).as_f64();
                g * s[ch]
            }
        })
        .collect();
    (
        Tensor { shape: x.shape().to_vec(), data: dx },
        Tensor { shape: slope.shape().to_vec(), data: ds.into_iter().map(T::of).collect() },
    )
}

pub(crate) fn same_shape<T: Real>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> Result<(), TensorError> {
    if a.shape() != b.shape() {
        return Err(shape_err(op, format!("shapes {:?} and {:?} differ", a.shape(), b.shape())));
    }
    Ok(())
}

pub(crate) fn concat_channels<T: Real>(parts: &[&Tensor<T>]) -> Result<Tensor<T>, TensorError> {
    let first = parts.first().ok_or_else(|| shape_err("concat_channels", "no inputs"))?;
    let (n, _, h, w) = first.dims4("concat_channels")?;
    let mut total = 0;
    for p in parts {
        let (pn, pc, ph, pw) = p.dims4("concat_channels")?;
        if (pn, ph, pw) != (n, h, w) {
            return Err(shape_err(
                "concat_channels",
                format!("shape {:?} incompatible with {:?}", p.shape(), first.shape()),
            ));
        }
        total += pc;
    }
    let plane = h * w;
    let mut data = Vec::with_capacity(n * total * plane);
    for i in 0..n {
        for p in parts {
            let pc = p.shape()[1];
            data.extend_from_slice(&p.data()[i * pc * plane..(i + 1) * pc * plane]);
        }
    }
    Tensor::new(vec![n, total, h, w], data)
}

pub(crate) fn split_channels<T: Real>(dy: &Tensor<T>, sizes: &[usize]) -> Vec<Tensor<T>> {
    let (n, c, h, w) = (dy.shape()[0], dy.shape()[1], dy.shape()[2], dy.shape()[3]);
    let plane = h * w;
    let mut offset = 0;
    sizes
        .iter()
        .map(|&pc| {
            let mut data = Vec::with_capacity(n * pc * plane);
            for i in 0..n {
                let start = (i * c + offset) * plane;
                data.extend_from_slice(&dy.data()[start..start + pc * plane]);
            }
            offset += pc;
            Tensor { shape: vec![n, pc, h, w], data }
        })
        .collect()
}

/// Per-(sample, channel) mean and floored standard deviation computed over the
/// union of two equally shaped NCHW tensors.
pub(crate) fn joint_stats<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<(Vec<f64>, Vec<f64>), TensorError> {
    same_shape("instance_normalize_pair", a, b)?;
    let (n, c, h, w) = a.dims4("instance_normalize_pair")?;
    let plane = h * w;
    if n * c * plane == 0 {
        return Err(shape_err("instance_normalize_pair", "empty tensors"));
    }
    let mut mean = Vec::with_capacity(n * c);
    let mut std = Vec::with_capacity(n * c);
    for nc in 0..n * c {
        let pa = &a.data()[nc * plane..(nc + 1) * plane];
        let pb = &b.data()[nc * plane..(nc + 1) * plane];
        let count = (2 * plane) as f64;
        let m0 = pa.iter().chain(pb).map(|v| v.as_f64()).sum::<f64>() / count;
        // One refinement pass so that constant inputs give their exact value.
        let m = m0 + pa.iter().chain(pb).map(|v| v.as_f64() - m0).sum::<f64>() / count;
        let var = pa.iter().chain(pb).map(|v| (v.as_f64() - m).powi(2)).sum::<f64>() / count;
        mean.push(m);
        std.push(var.sqrt().max(NORM_STD_FLOOR));
    }
    Ok((mean, std))
}

/// Jointly normalizes `a` and `b` and returns them concatenated along channels.
pub(crate) fn joint_norm<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
    let (mean, std) = joint_stats(a, b)?;
    let (n, c, h, w) = a.dims4("instance_normalize_pair")?;
    let plane = h * w;
    let mut data = Vec::with_capacity(2 * n * c * plane);
    for i in 0..n {
        for src in [a, b] {
            for ch in 0..c {
                let k = i * c + ch;
                let p = &src.data()[k * plane..(k + 1) * plane];
                data.extend(p.iter().map(|v| T::of((v.as_f64() - mean[k]) / std[k])));
            }
        }
    }
    Tensor::new(vec![n, 2 * c, h, w], data)
}

pub(crate) fn joint_norm_backward<T: Real>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    dy: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>), TensorError> {
    let (mean, std) = joint_stats(a, b)?;
    let (n, c, h, w) = a.dims4("instance_normalize_pair")?;
    let plane = h * w;
    let mut da = vec![T::zero(); a.numel()];
    let mut db = vec![T::zero(); b.numel()];
    for i in 0..n {
        for ch in 0..c {
            let k = i * c + ch;
            let xa = &a.data()[k * plane..(k + 1) * plane];
            let xb = &b.data()[k * plane..(k + 1) * plane];
            let ga = &dy.data()[(i * 2 * c + ch) * plane..][..plane];
            let gb = &dy.data()[(i * 2 * c + c + ch) * plane..][..plane];
            let count = (2 * plane) as f64;
            let (m, s) = (mean[k], std[k]);
            let floored = s <= NORM_STD_FLOOR;
            let y = |v: T| (v.as_f64() - m) / s;
            let mean_g = ga.iter().chain(gb).map(|g| g.as_f64()).sum::<f64>() / count;
            let mean_gy = if floored {
                0.0
            } else {
                xa.iter().zip(ga).chain(xb.iter().zip(gb)).map(|(&v, g)| y(v) * g.as_f64()).sum::<f64>() / count
            };
            for (dst, (src, g)) in [(&mut da, (xa, ga)), (&mut db, (xb, gb))] {
                for (j, (&v, gv)) in src.iter().zip(g).enumerate() {
                    dst[k * plane + j] = T::of((gv.as_f64() - mean_g - y(v) * mean_gy) / s);
                }
            }
        }
    }
    Ok((Tensor::new(a.shape().to_vec(), da)?, Tensor::new(b.shape().to_vec(), db)?))
}

/// `y = x * scale[n, c] + shift[n, c]` per sample and channel.
pub(crate) fn channel_affine<T: Real>(x: &Tensor<T>, scale: &[f64], shift: &[f64]) -> Result<Tensor<T>, TensorError> {
    let (n, c, h, w) = x.dims4("channel_affine")?;
    if scale.len() != n * c || shift.len() != n * c {
        return Err(shape_err(
            "channel_affine",
            format!("expected {} per-channel coefficients, got {}/{}", n * c, scale.len(), shift.len()),
        ));
    }
    let plane = h * w;
    let data = x
        .data()
        .iter()
        .enumerate()
        .map(|(i, v)| T::of(v.as_f64() * scale[i / plane] + shift[i / plane]))
        .collect();
    Tensor::new(x.shape().to_vec(), data)
}

pub(crate) fn splat<T: Real>(x: &Tensor<T>, maps: &[SparseMap]) -> Result<Tensor<T>, TensorError> {
    let (n, c, h, w) = x.dims4("spatial_map")?;
    if maps.len() != n {
        return Err(shape_err("spatial_map", format!("{} maps for a batch of {n}", maps.len())));
    }
    if maps.iter().any(|m| m.sources() != h * w || m.targets() != h * w) {
        return Err(shape_err("spatial_map", format!("map size does not match the {h}x{w} plane")));
    }
    let plane = h * w;
    let mut out = vec![T::zero(); x.numel()];
    out.par_chunks_mut(plane).zip(x.data().par_chunks(plane)).enumerate().for_each(|(nc, (dst, src))| {
        maps[nc / c].apply(src, dst);
    });
    Tensor::new(x.shape().to_vec(), out)
}

pub(crate) fn splat_backward<T: Real>(dy: &Tensor<T>, maps: &[SparseMap]) -> Tensor<T> {
    let c = dy.shape()[1];
    let plane = dy.shape()[2] * dy.shape()[3];
    let mut dx = vec![T::zero(); dy.numel()];
    dx.par_chunks_mut(plane).zip(dy.data().par_chunks(plane)).enumerate().for_each(|(nc, (dst, g))| {
        maps[nc / c].apply_transpose(g, dst);
    });
    Tensor { shape: dy.shape().to_vec(), data: dx }
}
