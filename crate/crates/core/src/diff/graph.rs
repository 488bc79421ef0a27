//! Append-only computation graph with reverse-mode accumulation.
//!
//! Nodes are only ever created from existing nodes, so insertion order is a
//! topological order and the producer graph is acyclic by construction.

use std::sync::Arc;

use super::ops::{ConvAttrs, Op, SampleGrid};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
pub enum Producer {
    Leaf,
    Op { op: Op, inputs: Vec<NodeId> },
}

/// A value in the graph together with its optional gradient accumulator.
#[derive(Clone, Debug)]
pub struct ValueNode<T> {
    pub value: Tensor<T>,
    pub grad: Option<Tensor<T>>,
    pub producer: Producer,
    pub requires_grad: bool,
}

#[derive(Clone, Debug, Default)]
pub struct Graph<T> {
    nodes: Vec<ValueNode<T>>,
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> NodeId {
        self.push(value, Producer::Leaf, false)
    }

    /// A leaf whose gradient is accumulated by [`Graph::backward`].
    pub fn variable(&mut self, value: Tensor<T>) -> NodeId {
        self.push(value, Producer::Leaf, true)
    }

    fn push(&mut self, value: Tensor<T>, producer: Producer, requires_grad: bool) -> NodeId {
        self.nodes.push(ValueNode { value, grad: None, producer, requires_grad });
        NodeId(self.nodes.len() - 1)
    }

    pub fn node(&self, id: NodeId) -> &ValueNode<T> {
        &self.nodes[id.0]
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    pub fn grad(&self, id: NodeId) -> Option<&Tensor<T>> {
        self.nodes[id.0].grad.as_ref()
    }

    pub fn take_grad(&mut self, id: NodeId) -> Option<Tensor<T>> {
        self.nodes[id.0].grad.take()
    }

    /// Evaluates `op` on existing nodes and records the result.
    pub fn apply(&mut self, op: Op, inputs: &[NodeId]) -> Result<NodeId> {
        if let Some(bad) = inputs.iter().find(|id| id.0 >= self.nodes.len()) {
            return Err(Error::Invalid(format!("node {} does not exist", bad.0)));
        }
        let values: Vec<&Tensor<T>> = inputs.iter().map(|id| &self.nodes[id.0].value).collect();
        let out = op.forward(&values)?;
        let requires_grad = inputs
            .iter()
            .enumerate()
            .any(|(i, id)| op.differentiable_input(i) && self.nodes[id.0].requires_grad);
        Ok(self.push(out, Producer::Op { op, inputs: inputs.to_vec() }, requires_grad))
    }

    /// Reverse sweep from a scalar root. Every variable leaf gets a gradient,
    /// zero-filled if the root does not depend on it.
    pub fn backward(&mut self, root: NodeId) -> Result<()> {
        let shape = self.nodes[root.0].value.shape().to_vec();
        if shape != [1] {
            return Err(Error::NonScalarRoot(shape));
        }
        self.backward_with(root, Tensor::scalar(T::one()))
    }

    /// Reverse sweep seeded with an arbitrary upstream gradient for `root`.
    pub fn backward_with(&mut self, root: NodeId, seed: Tensor<T>) -> Result<()> {
        if seed.shape() != self.nodes[root.0].value.shape() {
            return Err(Error::shape("backward", "seed gradient must match the root's shape"));
        }
        let mut pending: Vec<Option<Tensor<T>>> = vec![None; root.0 + 1];
        pending[root.0] = Some(seed);
        for i in (0..=root.0).rev() {
            let Some(g) = pending[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            let node = &self.nodes[i];
            let Producer::Op { op, inputs } = &node.producer else {
                accumulate(&mut self.nodes[i].grad, g);
                continue;
            };
            let needs: Vec<bool> = inputs.iter().map(|id| self.nodes[id.0].requires_grad).collect();
            let values: Vec<&Tensor<T>> = inputs.iter().map(|id| &self.nodes[id.0].value).collect();
            let grads = op.backward(&values, &node.value, &g, &needs);
            for (id, gi) in inputs.iter().zip(grads) {
                if let Some(gi) = gi {
                    accumulate(&mut pending[id.0], gi);
                }
            }
        }
        for node in self.nodes.iter_mut().take(root.0 + 1) {
            if node.requires_grad && matches!(node.producer, Producer::Leaf) && node.grad.is_none() {
                node.grad = Some(Tensor::zeros(node.value.shape()));
            }
        }
        Ok(())
    }

    // Convenience wrappers over `apply`.

    pub fn conv2d(&mut self, x: NodeId, w: NodeId, b: NodeId, attrs: ConvAttrs) -> Result<NodeId> {
        self.apply(Op::Conv2d(attrs), &[x, w, b])
    }

    pub fn conv3d(&mut self, x: NodeId, w: NodeId, b: NodeId, attrs: ConvAttrs) -> Result<NodeId> {
        self.apply(Op::Conv3d(attrs), &[x, w, b])
    }

    pub fn relu(&mut self, x: NodeId) -> Result<NodeId> {
        self.apply(Op::Relu, &[x])
    }

    pub fn linear(&mut self, x: NodeId, w: NodeId, b: NodeId, flatten: bool) -> Result<NodeId> {
        self.apply(Op::Linear { flatten }, &[x, w, b])
    }

    pub fn softmax(&mut self, x: NodeId, axis: usize) -> Result<NodeId> {
        self.apply(Op::SoftmaxAxis { axis }, &[x])
    }

    pub fn weighted_index_sum(&mut self, x: NodeId, axis: usize) -> Result<NodeId> {
        self.apply(Op::WeightedIndexSum { axis }, &[x])
    }

    pub fn instance_norm(&mut self, x: NodeId, mask: Option<NodeId>, eps: f64) -> Result<NodeId> {
        match mask {
            Some(m) => self.apply(Op::InstanceNorm { eps }, &[x, m]),
            None => self.apply(Op::InstanceNorm { eps }, &[x]),
        }
    }

    pub fn concat(&mut self, xs: &[NodeId], axis: usize) -> Result<NodeId> {
        self.apply(Op::ConcatAxis { axis }, xs)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(Op::Add, &[a, b])
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(Op::Mul, &[a, b])
    }

    pub fn sum(&mut self, x: NodeId) -> Result<NodeId> {
        self.apply(Op::Sum, &[x])
    }

    /// Multiplies a node by a constant scalar (a `[1]` node times a constant `[1]`).
    pub fn scale(&mut self, x: NodeId, k: f64) -> Result<NodeId> {
        let shape = self.value(x).shape().to_vec();
        let c = self.constant(Tensor::full(&shape, T::of(k)));
        self.mul(x, c)
    }

    pub fn smooth_l1(&mut self, pred: NodeId, target: NodeId, weights: Option<NodeId>, beta: f64, scale: f64) -> Result<NodeId> {
        let op = Op::SmoothL1 { beta, scale };
        match weights {
            Some(w) => self.apply(op, &[pred, target, w]),
            None => self.apply(op, &[pred, target]),
        }
    }

    pub fn bce_with_logits(&mut self, logits: NodeId, target: NodeId, weights: Option<NodeId>, scale: f64) -> Result<NodeId> {
        let op = Op::BceWithLogits { scale };
        match weights {
            Some(w) => self.apply(op, &[logits, target, w]),
            None => self.apply(op, &[logits, target]),
        }
    }

    pub fn trilinear_sample(&mut self, x: NodeId, grid: Arc<SampleGrid>) -> Result<NodeId> {
        self.apply(Op::TrilinearSample(grid), &[x])
    }

    pub fn cubic_d_sample(&mut self, x: NodeId, grid: Arc<SampleGrid>) -> Result<NodeId> {
        self.apply(Op::CubicDSample(grid), &[x])
    }

    pub fn mask_zero(&mut self, x: NodeId, mask: NodeId) -> Result<NodeId> {
        self.apply(Op::MaskZero, &[x, mask])
    }

    pub fn shift_concat(&mut self, left: NodeId, right: NodeId, levels: usize) -> Result<NodeId> {
        self.apply(Op::ShiftConcat { levels }, &[left, right])
    }
}

fn accumulate<T: Scalar>(slot: &mut Option<Tensor<T>>, g: Tensor<T>) {
    match slot {
        Some(acc) => acc.add_assign(&g),
        None => *slot = Some(g),
    }
}
