//! Define-by-run computation graph with reverse-mode differentiation.
//!
//! A [`Graph`] records every value produced through it. Nodes created by
//! [`Graph::leaf`] with `requires_grad` set are the differentiation targets;
//! operations whose inputs never require gradients are recorded as constants
//! and cost nothing at backward time.

use std::cell::{Ref, RefCell};
use std::fmt;
use std::rc::Rc;

use crate::error::{Result, TensorError};
use crate::real::Real;
use crate::tensor::Tensor;

/// A differentiable operation. `forward` and `backward` receive the input
/// values in the order the inputs were passed to [`Graph::apply`].
pub trait Operation<T: Real> {
    fn name(&self) -> &'static str;

    fn forward(&self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>>;

    /// Returns one gradient per input (`None` where the input is not
    /// differentiable through this op).
    fn backward(
        &self,
        inputs: &[&Tensor<T>],
        output: &Tensor<T>,
        grad_output: &Tensor<T>,
    ) -> Vec<Option<Tensor<T>>>;
}

struct Node<T: Real> {
    value: Rc<Tensor<T>>,
    parents: Vec<usize>,
    op: Option<Box<dyn Operation<T>>>,
    requires_grad: bool,
}

pub struct Graph<T: Real> {
    nodes: RefCell<Vec<Node<T>>>,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: RefCell::new(Vec::new()) }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, node: Node<T>) -> usize {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(node);
        nodes.len() - 1
    }

    pub fn leaf(&self, value: Tensor<T>, requires_grad: bool) -> Var<'_, T> {
        let id = self.push(Node { value: Rc::new(value), parents: vec![], op: None, requires_grad });
        Var { graph: self, id }
    }

    /// A leaf that gradients are tracked for.
    pub fn variable(&self, value: Tensor<T>) -> Var<'_, T> {
        self.leaf(value, true)
    }

    pub fn constant(&self, value: Tensor<T>) -> Var<'_, T> {
        self.leaf(value, false)
    }

    pub fn apply<'g>(
        &'g self,
        op: impl Operation<T> + 'static,
        inputs: &[Var<'g, T>],
    ) -> Result<Var<'g, T>> {
        let (value, requires_grad) = {
            let nodes = self.nodes.borrow();
            let values: Vec<&Tensor<T>> = inputs.iter().map(|v| &*nodes[v.id].value).collect();
            let value = op.forward(&values)?;
            (value, inputs.iter().any(|v| nodes[v.id].requires_grad))
        };
        let node = if requires_grad {
            Node {
                value: Rc::new(value),
                parents: inputs.iter().map(|v| v.id).collect(),
                op: Some(Box::new(op)),
                requires_grad: true,
            }
        } else {
            Node { value: Rc::new(value), parents: vec![], op: None, requires_grad: false }
        };
        Ok(Var { graph: self, id: self.push(node) })
    }

    fn value_of(&self, id: usize) -> Rc<Tensor<T>> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    /// Back-propagates from a scalar node. Gradients of interior nodes are
    /// released as soon as they have been pushed to their parents, so only
    /// leaf gradients survive in the result.
    pub fn backward(&self, root: Var<'_, T>) -> Result<Gradients<T>> {
        let nodes: Ref<'_, Vec<Node<T>>> = self.nodes.borrow();
        let root_value = &nodes[root.id].value;
        if root_value.len() != 1 {
            return Err(TensorError::shape(
                "backward",
                format!("root must be a scalar, got shape {:?}", root_value.shape()),
            ));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..=root.id).map(|_| None).collect();
        grads[root.id] = Some(Tensor::full(root_value.shape().to_vec(), T::one()));
        for id in (0..=root.id).rev() {
            let node = &nodes[id];
            let Some(op) = node.op.as_ref() else { continue };
            let Some(grad) = grads[id].take() else { continue };
            let inputs: Vec<&Tensor<T>> = node.parents.iter().map(|&p| &*nodes[p].value).collect();
            let input_grads = op.backward(&inputs, &node.value, &grad);
            debug_assert_eq!(input_grads.len(), node.parents.len(), "{}", op.name());
            for (&parent, g) in node.parents.iter().zip(input_grads) {
                let Some(g) = g else { continue };
                if !nodes[parent].requires_grad {
                    continue;
                }
                debug_assert_eq!(g.shape(), nodes[parent].value.shape(), "{}", op.name());
                match &mut grads[parent] {
                    Some(acc) => acc.add_assign(&g),
                    slot @ None => *slot = Some(g),
                }
            }
        }
        Ok(Gradients { grads })
    }
}

/// Leaf gradients produced by [`Graph::backward`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, var: Var<'_, T>) -> Option<&Tensor<T>> {
        self.grads.get(var.id).and_then(Option::as_ref)
    }

    /// Gradient of `var`, or zeros when nothing depended on it.
    pub fn get_or_zeros(&self, var: Var<'_, T>) -> Tensor<T> {
        self.get(var).cloned().unwrap_or_else(|| Tensor::zeros(var.shape()))
    }
}

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy)]
pub struct Var<'g, T: Real> {
    graph: &'g Graph<T>,
    id: usize,
}

impl<T: Real> fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
}

impl<'g, T: Real> Var<'g, T> {
    pub fn graph(&self) -> &'g Graph<T> {
        self.graph
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn value(&self) -> Rc<Tensor<T>> {
        self.graph.value_of(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.graph.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn dims4(&self) -> Result<[usize; 4]> {
        self.graph.nodes.borrow()[self.id].value.dims4()
    }

    pub fn requires_grad(&self) -> bool {
        self.graph.nodes.borrow()[self.id].requires_grad
    }

    pub fn same_node(&self, other: &Var<'_, T>) -> bool {
        std::ptr::eq(self.graph, other.graph) && self.id == other.id
    }
}
