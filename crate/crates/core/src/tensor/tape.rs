use std::sync::Arc;

use super::eval::{dot_value, l1_value, sq_err_value};
use super::kernels::{self, same_shape};
use super::{shape_err, Ops, Real, Scale, SparseMap, Tensor, TensorError};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op<T> {
    Leaf,
    Conv { x: usize, w: usize, b: Option<usize>, stride: usize, pad: usize },
    Prelu { x: usize, slope: usize },
    Relu { x: usize },
    Add { a: usize, b: usize },
    Sub { a: usize, b: usize },
    Scale { x: usize, factor: f64 },
    Resize { x: usize, scale: Scale },
    GaussDown { x: usize },
    Concat { parts: Vec<usize> },
    JointNorm { a: usize, b: usize },
    Affine { x: usize, scale: Vec<f64> },
    Map { x: usize, maps: Arc<Vec<SparseMap>> },
    L1 { a: usize, b: usize },
    SqErr { a: usize, b: usize },
    Dot { x: usize, w: Tensor<T> },
    Sum { x: usize },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Reverse-mode recording of a computation.
///
/// Leaf gradients persist across [`Tape::backward`] calls and accumulate;
/// intermediate gradients are recomputed per call.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    leaf_grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn add_into<T: Real>(slot: &mut Option<Tensor<T>>, g: Tensor<T>) {
    match slot {
        Some(acc) => acc.data_mut().iter_mut().zip(g.data()).for_each(|(a, b)| *a += *b),
        None => *slot = Some(g),
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new(), leaf_grads: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records an input. Gradients are tracked when `requires_grad` is set.
    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        self.leaf_grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, ids: &[usize]) -> bool {
        ids.iter().any(|&i| self.nodes[i].requires_grad)
    }

    /// Accumulated gradient of a leaf; zeros when the leaf was never reached.
    pub fn grad(&self, v: Var) -> Tensor<T> {
        self.leaf_grads[v.0].clone().unwrap_or_else(|| Tensor::zeros(self.nodes[v.0].value.shape()))
    }

    pub fn zero_grad(&mut self) {
        self.leaf_grads.iter_mut().for_each(|g| *g = None);
    }

    /// Propagates `d loss / d leaf` into every reachable `requires_grad` leaf.
    pub fn backward(&mut self, loss: Var) -> Result<(), TensorError> {
        let numel = self.nodes[loss.0].value.numel();
        if numel != 1 {
            return Err(TensorError::NonScalarLoss { numel });
        }
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.nodes[loss.0].value.shape(), T::one()));
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let nodes = &self.nodes;
            let val = |j: usize| &nodes[j].value;
            let need = |j: usize| nodes[j].requires_grad;
            let mut send = |j: usize, t: Tensor<T>| {
                if need(j) {
                    add_into(&mut grads[j], t);
                }
            };
            match &node.op {
                Op::Leaf => add_into(&mut self.leaf_grads[i], g),
                &Op::Conv { x, w, b, stride, pad } => {
                    let cg = kernels::conv2d_backward(val(x), val(w), &g, stride, pad, need(x), need(w))?;
                    if let Some(dx) = cg.dx {
                        send(x, dx);
                    }
                    if let Some(dw) = cg.dw {
                        send(w, dw);
                    }
                    if let Some(b) = b {
                        send(b, cg.db);
                    }
                }
                &Op::Prelu { x, slope } => {
                    let (dx, ds) = kernels::prelu_backward(val(x), val(slope), &g);
                    send(x, dx);
                    send(slope, ds);
                }
                &Op::Relu { x } => {
                    let xv = val(x);
                    let d = xv.data().iter().zip(g.data()).map(|(&v, &gv)| if v > T::zero() { gv } else { T::zero() });
                    send(x, Tensor::new(xv.shape().to_vec(), d.collect())?);
                }
                &Op::Add { a, b } => {
                    send(a, g.clone());
                    send(b, g);
                }
                &Op::Sub { a, b } => {
                    send(b, g.map(|v| -v));
                    send(a, g);
                }
                &Op::Scale { x, factor } => {
                    let f = T::of(factor);
                    send(x, g.map(|v| v * f));
                }
                &Op::Resize { x, scale } => {
                    send(x, kernels::bilinear_resize_backward(val(x).shape(), &g, scale)?);
                }
                &Op::GaussDown { x } => {
                    send(x, kernels::gauss_down_backward(val(x).shape(), &g)?);
                }
                Op::Concat { parts } => {
                    let sizes: Vec<usize> = parts.iter().map(|&p| val(p).shape()[1]).collect();
                    for (&p, part) in parts.iter().zip(kernels::split_channels(&g, &sizes)) {
                        send(p, part);
                    }
                }
                &Op::JointNorm { a, b } => {
                    let (da, db) = kernels::joint_norm_backward(val(a), val(b), &g)?;
                    send(a, da);
                    send(b, db);
                }
                Op::Affine { x, scale } => {
                    let zeros = vec![0.0; scale.len()];
                    send(*x, kernels::channel_affine(&g, scale, &zeros)?);
                }
                Op::Map { x, maps } => send(*x, kernels::splat_backward(&g, maps)),
                &Op::L1 { a, b } => {
                    let s = g.item();
                    let (av, bv) = (val(a), val(b));
                    let d: Vec<T> = av
                        .data()
                        .iter()
                        .zip(bv.data())
                        .map(|(&p, &q)| {
                            if p > q {
                                s
                            } else if p < q {
                                -s
                            } else {
                                T::zero()
                            }
                        })
                        .collect();
                    let d = Tensor::new(av.shape().to_vec(), d)?;
                    send(b, d.map(|v| -v));
                    send(a, d);
                }
                &Op::SqErr { a, b } => {
                    let s = T::of(2.0) * g.item();
                    let (av, bv) = (val(a), val(b));
                    let d = Tensor::new(
                        av.shape().to_vec(),
                        av.data().iter().zip(bv.data()).map(|(&p, &q)| (p - q) * s).collect(),
                    )?;
                    send(b, d.map(|v| -v));
                    send(a, d);
                }
                Op::Dot { x, w } => {
                    let s = g.item();
                    send(*x, w.map(|v| v * s));
                }
                &Op::Sum { x } => {
                    send(x, Tensor::full(val(x).shape(), g.item()));
                }
            }
        }
        Ok(())
    }
}

impl<T: Real> Ops<T> for Tape<T> {
    type V = Var;

    fn constant(&mut self, t: Tensor<T>) -> Var {
        self.leaf(t, false)
    }

    fn value<'a>(&'a self, v: &'a Var) -> &'a Tensor<T> {
        &self.nodes[v.0].value
    }

    fn conv2d(&mut self, x: &Var, w: &Var, b: Option<&Var>, stride: usize, pad: usize) -> Result<Var, TensorError> {
        let out = kernels::conv2d(self.value(x), self.value(w), b.map(|b| self.value(b)), stride, pad)?;
        let b = b.map(|b| b.0);
        let rg = self.rg(&[x.0, w.0]) || b.is_some_and(|b| self.nodes[b].requires_grad);
        Ok(self.push(out, Op::Conv { x: x.0, w: w.0, b, stride, pad }, rg))
    }

    fn prelu(&mut self, x: &Var, slope: &Var) -> Result<Var, TensorError> {
        let out = kernels::prelu(self.value(x), self.value(slope))?;
        let rg = self.rg(&[x.0, slope.0]);
        Ok(self.push(out, Op::Prelu { x: x.0, slope: slope.0 }, rg))
    }

    fn relu(&mut self, x: &Var) -> Result<Var, TensorError> {
        let out = self.value(x).map(|v| v.max(T::zero()));
        let rg = self.rg(&[x.0]);
        Ok(self.push(out, Op::Relu { x: x.0 }, rg))
    }

    fn add(&mut self, a: &Var, b: &Var) -> Result<Var, TensorError> {
        let (av, bv) = (self.value(a), self.value(b));
        same_shape("add", av, bv)?;
        let out = Tensor::new(av.shape().to_vec(), av.data().iter().zip(bv.data()).map(|(&p, &q)| p + q).collect())?;
        let rg = self.rg(&[a.0, b.0]);
        Ok(self.push(out, Op::Add { a: a.0, b: b.0 }, rg))
    }

    fn sub(&mut self, a: &Var, b: &Var) -> Result<Var, TensorError> {
        let (av, bv) = (self.value(a), self.value(b));
        same_shape("sub", av, bv)?;
        let out = Tensor::new(av.shape().to_vec(), av.data().iter().zip(bv.data()).map(|(&p, &q)| p - q).collect())?;
        let rg = self.rg(&[a.0, b.0]);
        Ok(self.push(out, Op::Sub { a: a.0, b: b.0 }, rg))
    }

    fn scale(&mut self, x: &Var, factor: f64) -> Result<Var, TensorError> {
        let f = T::of(factor);
        let out = self.value(x).map(|v| v * f);
        let rg = self.rg(&[x.0]);
        Ok(self.push(out, Op::Scale { x: x.0, factor }, rg))
    }

    fn resize(&mut self, x: &Var, scale: Scale) -> Result<Var, TensorError> {
        let out = kernels::bilinear_resize(self.value(x), scale)?;
        let rg = self.rg(&[x.0]);
        Ok(self.push(out, Op::Resize { x: x.0, scale }, rg))
    }

    fn gauss_down(&mut self, x: &Var) -> Result<Var, TensorError> {
        let out = kernels::gauss_down(self.value(x))?;
        let rg = self.rg(&[x.0]);
        Ok(self.push(out, Op::GaussDown { x: x.0 }, rg))
    }

    fn concat_channels(&mut self, parts: &[&Var]) -> Result<Var, TensorError> {
        let refs: Vec<&Tensor<T>> = parts.iter().map(|p| self.value(p)).collect();
        let out = kernels::concat_channels(&refs)?;
        let ids: Vec<usize> = parts.iter().map(|p| p.0).collect();
        let rg = self.rg(&ids);
        Ok(self.push(out, Op::Concat { parts: ids }, rg))
    }

    fn joint_norm(&mut self, a: &Var, b: &Var) -> Result<Var, TensorError> {
        let out = kernels::joint_norm(self.value(a), self.value(b))?;
        let rg = self.rg(&[a.0, b.0]);
        Ok(self.push(out, Op::JointNorm { a: a.0, b: b.0 }, rg))
    }

    fn channel_affine(&mut self, x: &Var, scale: Vec<f64>, shift: Vec<f64>) -> Result<Var, TensorError> {
        let out = kernels::channel_affine(self.value(x), &scale, &shift)?;
        let rg = self.rg(&[x.0]);
        Ok(self.push(out, Op::Affine { x: x.0, scale }, rg))
    }

    fn spatial_map(&mut self, x: &Var, maps: Arc<Vec<SparseMap>>) -> Result<Var, TensorError> {
        let out = kernels::splat(self.value(x), &maps)?;
        let rg = self.rg(&[x.0]);
        Ok(self.push(out, Op::Map { x: x.0, maps }, rg))
    }

    fn l1(&mut self, a: &Var, b: &Var) -> Result<Var, TensorError> {
        let v = l1_value(self.value(a), self.value(b))?;
        let rg = self.rg(&[a.0, b.0]);
        Ok(self.push(Tensor::scalar(v), Op::L1 { a: a.0, b: b.0 }, rg))
    }

    fn sq_err(&mut self, a: &Var, b: &Var) -> Result<Var, TensorError> {
        let v = sq_err_value(self.value(a), self.value(b))?;
        let rg = self.rg(&[a.0, b.0]);
        Ok(self.push(Tensor::scalar(v), Op::SqErr { a: a.0, b: b.0 }, rg))
    }

    fn dot(&mut self, x: &Var, w: Tensor<T>) -> Result<Var, TensorError> {
        let v = dot_value(self.value(x), &w)?;
        let rg = self.rg(&[x.0]);
        Ok(self.push(Tensor::scalar(v), Op::Dot { x: x.0, w }, rg))
    }

    fn sum(&mut self, x: &Var) -> Result<Var, TensorError> {
        let xv = self.value(x);
        if xv.numel() == 0 {
            return Err(shape_err("sum", "empty tensor"));
        }
        let v = T::of(xv.sum());
        let rg = self.rg(&[x.0]);
        Ok(self.push(Tensor::scalar(v), Op::Sum { x: x.0 }, rg))
    }
}
