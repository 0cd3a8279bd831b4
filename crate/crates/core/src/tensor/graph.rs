use std::cell::{Ref, RefCell};
use std::fmt;

use super::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Inputs handed to a node's gradient rule.
pub struct BackwardArgs<'a, S> {
    /// Gradient of the loss with respect to this node's output.
    pub grad: &'a [S],
    /// Values of the node's parents, in recording order.
    pub inputs: Vec<&'a Tensor<S>>,
    pub output: &'a Tensor<S>,
}

/// Gradient rule of a recorded op: one entry per parent, `None` for parents
/// that receive nothing.
pub type BackwardFn<S> = Box<dyn Fn(&BackwardArgs<'_, S>) -> Vec<Option<Vec<S>>>>;

struct Node<S> {
    value: Tensor<S>,
    parents: Vec<usize>,
    requires_grad: bool,
    backward: Option<BackwardFn<S>>,
}

/// Ordered record of executed operations. Nodes are appended in execution
/// order, so the reverse of the record is a valid backward schedule.
///
/// A graph is confined to one thread; run independent graphs per batch shard
/// and aggregate their leaf gradients afterwards.
pub struct Graph<S: Scalar = f64> {
    nodes: RefCell<Vec<Node<S>>>,
}

/// Handle to a value recorded on a [`Graph`].
pub struct Var<'g, S: Scalar = f64> {
    graph: &'g Graph<S>,
    id: usize,
}

impl<S: Scalar> Clone for Var<'_, S> {
    fn clone(&self) -> Self {
        *self
    }
}

impl<S: Scalar> Copy for Var<'_, S> {}

impl<S: Scalar> fmt::Debug for Var<'_, S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("shape", &self.shape())
            .finish()
    }
}

impl<S: Scalar> Default for Graph<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Graph<S> {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Records a leaf. Its `requires_grad` flag decides whether it collects
    /// gradients during [`Graph::backward`].
    pub fn leaf(&self, tensor: Tensor<S>) -> Var<'_, S> {
        let requires_grad = tensor.requires_grad();
        self.push(Node {
            value: tensor,
            parents: Vec::new(),
            requires_grad,
            backward: None,
        })
    }

    /// Records a trainable leaf.
    pub fn param(&self, tensor: Tensor<S>) -> Var<'_, S> {
        self.leaf(tensor.with_requires_grad(true))
    }

    /// Records a leaf that never receives gradients.
    pub fn constant(&self, tensor: Tensor<S>) -> Var<'_, S> {
        self.leaf(tensor.with_requires_grad(false))
    }

    /// Appends the result of a differentiable op. `backward` is dropped when
    /// no parent needs a gradient.
    pub fn record<'g>(
        &'g self,
        value: Tensor<S>,
        parents: &[Var<'g, S>],
        backward: BackwardFn<S>,
    ) -> Var<'g, S> {
        let requires_grad = {
            let nodes = self.nodes.borrow();
            parents.iter().any(|p| {
                debug_assert!(std::ptr::eq(p.graph, self), "var from another graph");
                nodes[p.id].requires_grad
            })
        };
        self.push(Node {
            value,
            parents: parents.iter().map(|p| p.id).collect(),
            requires_grad,
            backward: requires_grad.then_some(backward),
        })
    }

    fn push(&self, node: Node<S>) -> Var<'_, S> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(node);
        Var {
            graph: self,
            id: nodes.len() - 1,
        }
    }

    pub fn value(&self, var: Var<'_, S>) -> Ref<'_, Tensor<S>> {
        Ref::map(self.nodes.borrow(), |n| &n[var.id].value)
    }

    /// Copy of a recorded value, including any accumulated gradient.
    pub fn tensor(&self, var: Var<'_, S>) -> Tensor<S> {
        self.value(var).clone()
    }

    /// Gradient deposited on a leaf by [`Graph::backward`].
    pub fn grad(&self, var: Var<'_, S>) -> Option<Tensor<S>> {
        let nodes = self.nodes.borrow();
        let value = &nodes[var.id].value;
        value
            .grad()
            .map(|g| Tensor::new(value.shape().to_vec(), g.to_vec()).expect("grad shape"))
    }

    pub fn zero_grad(&self) {
        for node in self.nodes.borrow_mut().iter_mut() {
            node.value.clear_grad();
        }
    }

    /// Reverse sweep from a one-element `loss`. Leaf gradients accumulate
    /// across calls until [`Graph::zero_grad`].
    pub fn backward(&self, loss: Var<'_, S>) -> Result<()> {
        let mut nodes = self.nodes.borrow_mut();
        if nodes[loss.id].value.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                nodes[loss.id].value.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<S>>> = vec![None; loss.id + 1];
        grads[loss.id] = Some(vec![S::one()]);
        for id in (0..=loss.id).rev() {
            let Some(grad) = grads[id].take() else {
                continue;
            };
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(rule) = &node.backward else {
                // Leaf: keep for deposit below.
                grads[id] = Some(grad);
                continue;
            };
            let args = BackwardArgs {
                grad: &grad,
                inputs: node.parents.iter().map(|&p| &nodes[p].value).collect(),
                output: &node.value,
            };
            let parent_grads = rule(&args);
            debug_assert_eq!(parent_grads.len(), node.parents.len());
            for (&p, pg) in node.parents.iter().zip(parent_grads) {
                let Some(pg) = pg else { continue };
                if !nodes[p].requires_grad {
                    continue;
                }
                debug_assert_eq!(pg.len(), nodes[p].value.numel());
                match &mut grads[p] {
                    Some(acc) => acc.iter_mut().zip(&pg).for_each(|(a, &b)| *a += b),
                    slot => *slot = Some(pg),
                }
            }
        }
        for (id, grad) in grads.into_iter().enumerate() {
            if let Some(grad) = grad {
                let node = &mut nodes[id];
                if node.backward.is_none() && node.parents.is_empty() {
                    node.value.accumulate_grad(&grad);
                }
            }
        }
        Ok(())
    }
}

impl<'g, S: Scalar> Var<'g, S> {
    pub fn graph(&self) -> &'g Graph<S> {
        self.graph
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn value(&self) -> Ref<'g, Tensor<S>> {
        self.graph.value(*self)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    pub fn to_tensor(&self) -> Tensor<S> {
        self.graph.tensor(*self)
    }

    pub fn requires_grad(&self) -> bool {
        self.graph.nodes.borrow()[self.id].requires_grad
    }

    pub fn grad(&self) -> Option<Tensor<S>> {
        self.graph.grad(*self)
    }

    pub fn backward(&self) -> Result<()> {
        self.graph.backward(*self)
    }
}
