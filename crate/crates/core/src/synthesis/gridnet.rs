use rand::{Rng, RngCore};

use crate::tensor::{Ops, ParamId, ParamStore, Real, Scale, Tensor, TensorError};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GridNetConfig {
    pub rows: usize,
    pub cols: usize,
    pub channels: Vec<usize>,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl Default for GridNetConfig {
    fn default() -> Self {
        GridNetConfig { rows: 3, cols: 6, channels: vec![32, 64, 96], in_channels: 134, out_channels: 3 }
    }
}

impl GridNetConfig {
    pub fn validate(&self) -> Result<(), TensorError> {
        let err = |d: String| Err(TensorError::Shape { op: "gridnet_config", detail: d });
        if self.rows == 0 || self.channels.len() != self.rows {
            return err(format!("{} rows with {} channel sizes", self.rows, self.channels.len()));
        }
        if self.cols < 2 || !self.cols.is_multiple_of(2) {
            return err(format!("column count {} must be even and at least 2", self.cols));
        }
        if self.in_channels == 0 || self.out_channels == 0 || self.channels.contains(&0) {
            return err("channel counts must be positive".into());
        }
        Ok(())
    }

    /// Spatial extents must be multiples of this.
    pub fn divisor(&self) -> usize {
        1 << (self.rows - 1)
    }
}

#[derive(Clone, Copy, Debug)]
struct Conv {
    w: ParamId,
    b: ParamId,
}

#[derive(Clone, Copy, Debug)]
struct Lateral {
    conv1: Conv,
    slope: ParamId,
    conv2: Conv,
}

/// Shared shape of the down and up blocks: `PReLU -> conv -> PReLU -> conv`,
/// the first conv strided for down blocks and preceded by bilinear
/// upsampling for up blocks.
#[derive(Clone, Copy, Debug)]
struct Vertical {
    slope1: ParamId,
    conv1: Conv,
    slope2: ParamId,
    conv2: Conv,
}

#[derive(Clone, Debug)]
struct Layout {
    head: Lateral,
    tail_slope: ParamId,
    tail: Conv,
    lat: Vec<Vec<Option<Lateral>>>,
    down: Vec<Vec<Option<Vertical>>>,
    up: Vec<Vec<Option<Vertical>>>,
}

/// Grid of `rows` resolutions by `cols` columns; row `r` works at scale
/// `1 / 2^r`. The first half of the columns feeds information downward, the
/// second half upward.
#[derive(Clone, Debug)]
pub struct GridNet<T = f32> {
    pub config: GridNetConfig,
    pub params: ParamStore<T>,
    layout: Layout,
}

/// Registers parameters in layout order; without an rng every tensor is zero.
struct Builder<'a, T> {
    params: ParamStore<T>,
    rng: Option<&'a mut dyn RngCore>,
}

impl<T: Real> Builder<'_, T> {
    fn init(&mut self, shape: &[usize], fan_in: usize) -> Tensor<T> {
        match self.rng.as_mut() {
            Some(rng) => ParamStore::uniform(shape, fan_in, rng),
            None => Tensor::zeros(shape),
        }
    }

    fn conv(&mut self, name: &str, cin: usize, cout: usize) -> Conv {
        let fan_in = cin * 9;
        let w = self.init(&[cout, cin, 3, 3], fan_in);
        let b = self.init(&[cout], fan_in);
        Conv { w: self.params.register(format!("{name}.weight"), w), b: self.params.register(format!("{name}.bias"), b) }
    }

    fn prelu(&mut self, name: &str, c: usize) -> ParamId {
        let slope = if self.rng.is_some() { Tensor::full(&[c], T::of(0.25)) } else { Tensor::zeros(&[c]) };
        self.params.register(format!("{name}.slope"), slope)
    }

    fn lateral(&mut self, name: &str, cin: usize, c: usize) -> Lateral {
        Lateral {
            conv1: self.conv(&format!("{name}.0"), cin, c),
            slope: self.prelu(&format!("{name}.1"), c),
            conv2: self.conv(&format!("{name}.2"), c, c),
        }
    }

    fn vertical(&mut self, name: &str, cin: usize, c: usize) -> Vertical {
        Vertical {
            slope1: self.prelu(&format!("{name}.0"), cin),
            conv1: self.conv(&format!("{name}.1"), cin, c),
            slope2: self.prelu(&format!("{name}.2"), c),
            conv2: self.conv(&format!("{name}.3"), c, c),
        }
    }
}

impl<T: Real> GridNet<T> {
    pub fn new(config: GridNetConfig, rng: &mut impl Rng) -> Result<Self, TensorError> {
        Self::build(config, Some(rng))
    }

    /// All parameters zero, PReLU slopes included.
    pub fn zeroed(config: GridNetConfig) -> Result<Self, TensorError> {
        Self::build(config, None)
    }

    fn build(config: GridNetConfig, rng: Option<&mut dyn RngCore>) -> Result<Self, TensorError> {
        config.validate()?;
        let mut b = Builder { params: ParamStore::new(), rng };
        let (rows, cols, ch) = (config.rows, config.cols, &config.channels);
        let head = b.lateral("head", config.in_channels, ch[0]);
        let mut lat = vec![vec![None; cols]; rows];
        let mut down = vec![vec![None; cols]; rows];
        let mut up = vec![vec![None; cols]; rows];
        for r in 0..rows {
            for c in 0..cols {
                if c > 0 {
                    lat[r][c] = Some(b.lateral(&format!("grid.{r}.{c}.lat"), ch[r], ch[r]));
                }
                if r > 0 && c < cols / 2 {
                    down[r][c] = Some(b.vertical(&format!("grid.{r}.{c}.down"), ch[r - 1], ch[r]));
                }
                if r + 1 < rows && c >= cols / 2 {
                    up[r][c] = Some(b.vertical(&format!("grid.{r}.{c}.up"), ch[r + 1], ch[r]));
                }
            }
        }
        let tail_slope = b.prelu("tail.0", ch[0]);
        let tail = b.conv("tail.1", ch[0], config.out_channels);
        let layout = Layout { head, tail_slope, tail, lat, down, up };
        Ok(GridNet { config, params: b.params, layout })
    }

    /// Network with the parameters of `params`, which must match the layout
    /// of `config` name for name and shape for shape.
    pub fn with_params(config: GridNetConfig, params: ParamStore<T>) -> Result<Self, TensorError> {
        let mut net = GridNet::zeroed(config)?;
        if params.len() != net.params.len() {
            return Err(TensorError::Shape {
                op: "gridnet_load",
                detail: format!("expected {} parameters, found {}", net.params.len(), params.len()),
            });
        }
        for i in 0..net.params.len() {
            let id = ParamId(i);
            let name = net.params.name(id).to_owned();
            let src = params.by_name(&name).ok_or_else(|| TensorError::Shape {
                op: "gridnet_load",
                detail: format!("missing parameter \"{name}\""),
            })?;
            if src.shape() != net.params.get(id).shape() {
                return Err(TensorError::Shape {
                    op: "gridnet_load",
                    detail: format!("parameter \"{name}\" has shape {:?}, expected {:?}", src.shape(), net.params.get(id).shape()),
                });
            }
            *net.params.get_mut(id) = src.clone();
        }
        Ok(net)
    }

    pub fn cast<U: Real>(&self) -> GridNet<U> {
        GridNet { config: self.config.clone(), params: self.params.cast(), layout: self.layout.clone() }
    }

    /// `N x in x H x W -> N x out x H x W` using parameters bound in
    /// registration order.
    pub fn forward<O: Ops<T>>(&self, ops: &mut O, p: &[O::V], x: &O::V) -> Result<O::V, TensorError> {
        let (h, w) = {
            let s = ops.value(x).shape();
            if s.len() != 4 || s[1] != self.config.in_channels {
                return Err(TensorError::Shape {
                    op: "gridnet_forward",
                    detail: format!("expected N x {} x H x W input, got {s:?}", self.config.in_channels),
                });
            }
            (s[2], s[3])
        };
        let d = self.config.divisor();
        if h % d != 0 || w % d != 0 {
            return Err(TensorError::Shape {
                op: "gridnet_forward",
                detail: format!("spatial size {h}x{w} is not divisible by {d}"),
            });
        }
        let (rows, cols) = (self.config.rows, self.config.cols);
        let l = &self.layout;
        let mut grid: Vec<Vec<Option<O::V>>> = vec![vec![None; cols]; rows];
        let node = |g: &Vec<Vec<Option<O::V>>>, r: usize, c: usize| g[r][c].clone().expect("grid node computed");

        grid[0][0] = Some(lateral(ops, p, &l.head, x, false)?);
        for c in 0..cols / 2 {
            for r in 0..rows {
                let mut acc = if c > 0 { Some(lateral(ops, p, l.lat[r][c].as_ref().unwrap(), &node(&grid, r, c - 1), true)?) } else { None };
                if r > 0 {
                    let v = vertical(ops, p, l.down[r][c].as_ref().unwrap(), &node(&grid, r - 1, c), false)?;
                    acc = Some(match acc {
                        Some(a) => ops.add(&a, &v)?,
                        None => v,
                    });
                }
                if let Some(a) = acc {
                    grid[r][c] = Some(a);
                }
            }
        }
        for c in cols / 2..cols {
            for r in (0..rows).rev() {
                let mut acc = lateral(ops, p, l.lat[r][c].as_ref().unwrap(), &node(&grid, r, c - 1), true)?;
                if r + 1 < rows {
                    let v = vertical(ops, p, l.up[r][c].as_ref().unwrap(), &node(&grid, r + 1, c), true)?;
                    acc = ops.add(&acc, &v)?;
                }
                grid[r][c] = Some(acc);
            }
            // Columns before the previous one are no longer needed.
            if c >= 2 {
                grid.iter_mut().for_each(|row| row[c - 2] = None);
            }
        }
        let out = node(&grid, 0, cols - 1);
        drop(grid);
        let a = ops.prelu(&out, &p[l.tail_slope.0])?;
        ops.conv2d(&a, &p[l.tail.w.0], Some(&p[l.tail.b.0]), 1, 1)
    }
}

fn conv<T: Real, O: Ops<T>>(ops: &mut O, p: &[O::V], c: &Conv, x: &O::V, stride: usize) -> Result<O::V, TensorError> {
    ops.conv2d(x, &p[c.w.0], Some(&p[c.b.0]), stride, 1)
}

fn lateral<T: Real, O: Ops<T>>(ops: &mut O, p: &[O::V], b: &Lateral, x: &O::V, skip: bool) -> Result<O::V, TensorError> {
    let y = conv(ops, p, &b.conv1, x, 1)?;
    let y = ops.prelu(&y, &p[b.slope.0])?;
    let y = conv(ops, p, &b.conv2, &y, 1)?;
    if skip {
        ops.add(&y, x)
    } else {
        Ok(y)
    }
}

fn vertical<T: Real, O: Ops<T>>(ops: &mut O, p: &[O::V], b: &Vertical, x: &O::V, upward: bool) -> Result<O::V, TensorError> {
    let (src, stride) = if upward { (ops.resize(x, Scale::Up2)?, 1) } else { (x.clone(), 2) };
    let y = ops.prelu(&src, &p[b.slope1.0])?;
    let y = conv(ops, p, &b.conv1, &y, stride)?;
    let y = ops.prelu(&y, &p[b.slope2.0])?;
    conv(ops, p, &b.conv2, &y, 1)
}
