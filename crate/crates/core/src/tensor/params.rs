use std::collections::HashMap;

use rand::Rng;

use super::{Ops, Real, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Ordered, named collection of trainable tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore<T> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
    index: HashMap<String, usize>,
}

impl<T: Real> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore { names: Vec::new(), tensors: Vec::new(), index: HashMap::new() }
    }

    /// Registers a parameter. Panics on a duplicate name, which is a
    /// programming error in the model builder.
    pub fn register(&mut self, name: impl Into<String>, value: Tensor<T>) -> ParamId {
        let name = name.into();
        assert!(!self.index.contains_key(&name), "duplicate parameter {name}");
        self.index.insert(name.clone(), self.names.len());
        self.names.push(name);
        self.tensors.push(value);
        ParamId(self.tensors.len() - 1)
    }

    /// Weight tensor drawn from `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
    pub fn uniform(shape: &[usize], fan_in: usize, rng: &mut impl Rng) -> Tensor<T> {
        let bound = 1.0 / (fan_in as f64).sqrt();
        Tensor::from_fn(shape, |_| T::of(rng.random_range(-bound..bound)))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.tensors[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor<T>> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn by_name_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.id(name).map(|id| &mut self.tensors[id.0])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor<T>> {
        self.tensors.iter_mut()
    }

    pub fn numel(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
            index: self.index.clone(),
        }
    }

    /// Binds every parameter as a constant of `ops`, in registration order.
    pub fn bind_constants<O: Ops<T>>(&self, ops: &mut O) -> Vec<O::V> {
        self.tensors.iter().map(|t| ops.constant(t.clone())).collect()
    }

    /// Binds every parameter as a gradient-tracking leaf of `tape`.
    pub fn bind_leaves(&self, tape: &mut Tape<T>) -> Vec<Var> {
        self.tensors.iter().map(|t| tape.leaf(t.clone(), true)).collect()
    }
}
