//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every operation in creation order, so the tape is
//! already topologically sorted; [`Graph::backward`] walks it once in
//! reverse. Parameters live outside the graph in a [`ParamStore`] and are
//! bound as leaves; backward adds the leaf gradients into the store.
//!
//! Array layouts: convolution, batch norm and pooling take `[B, C, L]`;
//! affine layers, heads and losses take `[B, N]`.

mod check;
mod ops;
mod param;
mod tensor;

pub use check::{finite_difference_check, finite_difference_check_scaled, relative_error, HasParams};
pub use ops::BnMode;
pub use param::{adam_step, Adam, Param, ParamId, ParamStore};
pub use tensor::Tensor;

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use crate::Real;
use ops::Op;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(usize);

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// A computation tape over values of type `T`.
#[derive(Debug)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    bound: BTreeMap<ParamId, NodeId>,
    grads: Vec<Vec<T>>,
    visits: usize,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            bound: BTreeMap::new(),
            grads: Vec::new(),
            visits: 0,
        }
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// Constant input; no gradient is computed for it.
    pub fn input(&mut self, value: Tensor<T>) -> NodeId {
        self.push(value, Op::Leaf, false)
    }

    /// Leaf whose gradient is kept (readable with [`Graph::grad`]) but not
    /// written to any parameter.
    pub fn variable(&mut self, value: Tensor<T>) -> NodeId {
        self.push(value, Op::Leaf, true)
    }

    /// Binds a parameter as a leaf. Binding the same parameter twice returns the same node.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> NodeId {
        if let Some(&node) = self.bound.get(&id) {
            return node;
        }
        let node = self.push(store.get(id).value.clone(), Op::Leaf, true);
        self.bound.insert(id, node);
        node
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    /// First element of a node's value (losses are single-element).
    pub fn scalar(&self, id: NodeId) -> T {
        self.nodes[id.0].value.data()[0]
    }

    /// Gradient of the last backward pass with respect to a node.
    pub fn grad(&self, id: NodeId) -> Option<&[T]> {
        self.grads.get(id.0).filter(|g| !g.is_empty()).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Number of nodes whose backward rule ran in the last pass.
    pub fn backward_visits(&self) -> usize {
        self.visits
    }

    /// Batch mean and biased variance recorded by a train-mode batch norm node.
    pub fn batch_stats(&self, id: NodeId) -> Option<(&[T], &[T])> {
        match &self.nodes[id.0].op {
            Op::BatchNorm {
                mode: BnMode::Train,
                mean,
                var,
                ..
            } => Some((mean, var)),
            _ => None,
        }
    }

    /// Reverse pass from a single-element `loss`, seeding its gradient with 1.
    ///
    /// Every node is visited at most once. Gradients of bound parameter
    /// leaves are added to `store`, so two passes without zeroing double them.
    pub fn backward(&mut self, loss: NodeId, store: &mut ParamStore<T>) {
        self.run_backward(loss);
        for (&pid, &node) in &self.bound {
            let g = &self.grads[node.0];
            if g.is_empty() {
                continue;
            }
            for (acc, v) in store.get_mut(pid).grad.iter_mut().zip(g) {
                *acc = *acc + *v;
            }
        }
    }

    fn run_backward(&mut self, loss: NodeId) {
        let n = loss.0 + 1;
        let mut grads: Vec<Vec<T>> = vec![Vec::new(); n];
        grads[loss.0] = vec![T::one(); self.nodes[loss.0].value.len()];
        self.visits = 0;
        for i in (0..n).rev() {
            if grads[i].is_empty() || !self.nodes[i].needs_grad {
                continue;
            }
            self.visits += 1;
            let (lower, upper) = grads.split_at_mut(i);
            let node = &self.nodes[i];
            ops::backward(&node.op, &node.value, &upper[0], &self.nodes, lower);
        }
        self.grads = grads;
    }

    fn wants(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|id| self.nodes[id.0].needs_grad)
    }
}

#[cfg(test)]
mod tests;
