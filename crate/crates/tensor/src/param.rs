use std::collections::HashMap;

use indexmap::IndexMap;
use rand::Rng;

use crate::error::{Result, TensorError};
use crate::graph::{Gradients, Graph, Var};
use crate::real::Real;
use crate::tensor::Tensor;

/// Ordered collection of named parameter tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<T> {
    tensors: IndexMap<String, Tensor<T>>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore { tensors: IndexMap::new() }
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor<T>) {
        self.tensors.insert(name.into(), tensor);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>> {
        self.tensors.get(name).ok_or_else(|| TensorError::UnknownParam(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<T>> {
        self.tensors.get_mut(name).ok_or_else(|| TensorError::UnknownParam(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<T>)> {
        self.tensors.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn element_count(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    /// Adds a convolution weight with Kaiming-uniform fan-in scaling and a
    /// zero bias. `shape` is the full weight shape; `fan_in` is supplied by
    /// the caller because transposed convolutions lay weights out differently.
    pub fn add_conv(
        &mut self,
        rng: &mut impl Rng,
        name: &str,
        shape: [usize; 4],
        fan_in: usize,
        bias_len: usize,
        gain: f64,
    ) {
        let bound = gain * (6.0 / fan_in as f64).sqrt();
        let weight = Tensor::from_fn(shape.to_vec(), |_| T::lit(rng.gen_range(-bound..=bound)));
        self.insert(format!("{name}.weight"), weight);
        self.insert(format!("{name}.bias"), Tensor::zeros(vec![bias_len]));
    }
}

/// Places parameters into a graph as differentiable leaves. Binding the same
/// name twice returns the same node, so reused sub-networks share one set of
/// weights and their gradients accumulate.
pub struct Binder<'g, T: Real> {
    graph: &'g Graph<T>,
    trainable: bool,
    bound: HashMap<String, Var<'g, T>>,
    order: Vec<String>,
}

impl<'g, T: Real> Binder<'g, T> {
    pub fn new(graph: &'g Graph<T>, trainable: bool) -> Self {
        Binder { graph, trainable, bound: HashMap::new(), order: Vec::new() }
    }

    pub fn graph(&self) -> &'g Graph<T> {
        self.graph
    }

    pub fn bind(&mut self, store: &ParamStore<T>, name: &str) -> Result<Var<'g, T>> {
        if let Some(v) = self.bound.get(name) {
            return Ok(*v);
        }
        let var = self.graph.leaf(store.get(name)?.clone(), self.trainable);
        self.bound.insert(name.to_string(), var);
        self.order.push(name.to_string());
        Ok(var)
    }

    pub fn var(&self, name: &str) -> Option<Var<'g, T>> {
        self.bound.get(name).copied()
    }

    pub fn bound_names(&self) -> &[String] {
        &self.order
    }

    /// Collects parameter gradients in binding order; parameters that did not
    /// influence the root get zero gradients.
    pub fn collect(&self, grads: &Gradients<T>) -> IndexMap<String, Tensor<T>> {
        self.order
            .iter()
            .map(|name| (name.clone(), grads.get_or_zeros(self.bound[name])))
            .collect()
    }
}
