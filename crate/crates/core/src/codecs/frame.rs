use super::CodecError;
use crate::tensor::{Real, Tensor};

/// Magnitude above which a flow component marks an unknown vector.
pub const UNKNOWN_FLOW: f32 = 1e9;

/// Planar RGB image, channel-major (`[c][y][x]`), nominally in `[0, 1]`.
#[derive(Clone, PartialEq)]
pub struct Frame {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl std::fmt::Debug for Frame {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Frame({}x{})", self.width, self.height)
    }
}

impl Frame {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self, CodecError> {
        if data.len() != 3 * width * height {
            return Err(CodecError::Invalid(format!(
                "frame {width}x{height} needs {} values, got {}",
                3 * width * height,
                data.len()
            )));
        }
        Ok(Frame { width, height, data })
    }

    pub fn filled(width: usize, height: usize, rgb: [f32; 3]) -> Self {
        Self::from_fn(width, height, |c, _, _| rgb[c])
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(3 * width * height);
        for c in 0..3 {
            for y in 0..height {
                for x in 0..width {
                    data.push(f(c, y, x));
                }
            }
        }
        Frame { width, height, data }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> usize {
        self.width * self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        let p = self.pixels();
        &self.data[c * p..(c + 1) * p]
    }

    pub fn same_dims(&self, other: &Frame) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// Rec.601 luma, row-major.
    pub fn luma(&self) -> Vec<f32> {
        let (r, g, b) = (self.plane(0), self.plane(1), self.plane(2));
        (0..self.pixels()).map(|i| 0.299 * r[i] + 0.587 * g[i] + 0.114 * b[i]).collect()
    }

    /// `1 x 3 x H x W` tensor.
    pub fn to_tensor<T: Real>(&self) -> Tensor<T> {
        Tensor::new(vec![1, 3, self.height, self.width], self.data.iter().map(|&v| T::of(v as f64)).collect())
            .expect("frame layout matches tensor shape")
    }

    /// Batch item `index` of an `N x 3 x H x W` tensor.
    pub fn from_tensor<T: Real>(t: &Tensor<T>, index: usize) -> Result<Self, CodecError> {
        let s = t.shape();
        if s.len() != 4 || s[1] != 3 || index >= s[0] {
            return Err(CodecError::Invalid(format!("tensor {s:?} is not an RGB batch containing item {index}")));
        }
        let n = 3 * s[2] * s[3];
        let data = t.data()[index * n..(index + 1) * n].iter().map(|v| v.as_f64() as f32).collect();
        Frame::new(s[3], s[2], data)
    }

    pub fn crop(&self, x0: usize, y0: usize, width: usize, height: usize) -> Result<Self, CodecError> {
        if x0 + width > self.width || y0 + height > self.height {
            return Err(CodecError::Invalid(format!(
                "crop {width}x{height}+{x0}+{y0} exceeds {}x{}",
                self.width, self.height
            )));
        }
        Ok(Frame::from_fn(width, height, |c, y, x| self.get(c, y0 + y, x0 + x)))
    }

    pub fn flip_horizontal(&self) -> Self {
        Frame::from_fn(self.width, self.height, |c, y, x| self.get(c, y, self.width - 1 - x))
    }

    pub fn flip_vertical(&self) -> Self {
        Frame::from_fn(self.width, self.height, |c, y, x| self.get(c, self.height - 1 - y, x))
    }
}

/// Dense displacement field with `a(x) ~ b(x + F(x))`.
#[derive(Clone, PartialEq)]
pub struct FlowField {
    width: usize,
    height: usize,
    u: Vec<f32>,
    v: Vec<f32>,
}

impl std::fmt::Debug for FlowField {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "FlowField({}x{})", self.width, self.height)
    }
}

impl FlowField {
    pub fn new(width: usize, height: usize, u: Vec<f32>, v: Vec<f32>) -> Result<Self, CodecError> {
        if u.len() != width * height || v.len() != width * height {
            return Err(CodecError::Invalid(format!(
                "flow {width}x{height} needs {} values per component, got {}/{}",
                width * height,
                u.len(),
                v.len()
            )));
        }
        Ok(FlowField { width, height, u, v })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self::uniform(width, height, 0.0, 0.0)
    }

    pub fn uniform(width: usize, height: usize, du: f32, dv: f32) -> Self {
        FlowField { width, height, u: vec![du; width * height], v: vec![dv; width * height] }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> (f32, f32)) -> Self {
        let (mut u, mut v) = (Vec::with_capacity(width * height), Vec::with_capacity(width * height));
        for y in 0..height {
            for x in 0..width {
                let (a, b) = f(y, x);
                u.push(a);
                v.push(b);
            }
        }
        FlowField { width, height, u, v }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn u(&self) -> &[f32] {
        &self.u
    }

    pub fn v(&self) -> &[f32] {
        &self.v
    }

    pub fn at(&self, y: usize, x: usize) -> (f32, f32) {
        let i = y * self.width + x;
        (self.u[i], self.v[i])
    }

    /// Finite and not an unknown-flow sentinel.
    pub fn is_known(&self, index: usize) -> bool {
        let (u, v) = (self.u[index], self.v[index]);
        u.is_finite() && v.is_finite() && u.abs() <= UNKNOWN_FLOW && v.abs() <= UNKNOWN_FLOW
    }

    pub fn crop(&self, x0: usize, y0: usize, width: usize, height: usize) -> Result<Self, CodecError> {
        if x0 + width > self.width || y0 + height > self.height {
            return Err(CodecError::Invalid(format!(
                "crop {width}x{height}+{x0}+{y0} exceeds {}x{}",
                self.width, self.height
            )));
        }
        Ok(FlowField::from_fn(width, height, |y, x| self.at(y0 + y, x0 + x)))
    }

    /// Mirrors the field left-right; horizontal motion changes sign.
    pub fn flip_horizontal(&self) -> Self {
        FlowField::from_fn(self.width, self.height, |y, x| {
            let (u, v) = self.at(y, self.width - 1 - x);
            (-u, v)
        })
    }

    pub fn flip_vertical(&self) -> Self {
        FlowField::from_fn(self.width, self.height, |y, x| {
            let (u, v) = self.at(self.height - 1 - y, x);
            (u, -v)
        })
    }
}
