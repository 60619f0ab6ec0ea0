use std::cell::{Ref, RefCell};

use crate::error::{Error, Result};

use super::ops::{self, Op};
use super::{Scalar, Tensor};

pub(crate) struct Node<T: Scalar> {
    pub value: Tensor<T>,
    /// Leaf that collects gradient.
    pub requires_grad: bool,
    /// Some path from a `requires_grad` leaf reaches this node.
    pub needs_grad: bool,
    pub grad: Option<Tensor<T>>,
    pub op: Op<T>,
}

/// Ordered record of differentiable operations executed during one forward pass.
///
/// Nodes are appended in execution order, so the node list is already a
/// topological order; [`Tape::backward`] walks it in reverse exactly once.
/// A tape is single-threaded (`!Sync`) and meant to be dropped after the
/// backward pass.
pub struct Tape<T: Scalar = f32> {
    pub(crate) nodes: RefCell<Vec<Node<T>>>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t, T: Scalar = f32> {
    pub(crate) tape: &'t Tape<T>,
    pub(crate) id: usize,
}

impl<T: Scalar> std::fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("shape", &self.shape())
            .finish()
    }
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
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

    pub fn leaf(&self, value: Tensor<T>, requires_grad: bool) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            requires_grad,
            needs_grad: requires_grad,
            grad: None,
            op: Op::Leaf,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    /// Trainable leaf.
    pub fn param(&self, value: Tensor<T>) -> Var<'_, T> {
        self.leaf(value, true)
    }

    /// Leaf that never accumulates gradient.
    pub fn constant(&self, value: Tensor<T>) -> Var<'_, T> {
        self.leaf(value, false)
    }

    pub(crate) fn push(&self, value: Tensor<T>, op: Op<T>) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        let needs_grad = op.inputs().iter().any(|&i| nodes[i].needs_grad);
        nodes.push(Node {
            value,
            requires_grad: false,
            needs_grad,
            grad: None,
            op,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    /// Reverse-mode sweep from a scalar `loss`.
    ///
    /// Gradients accumulate into every reachable `requires_grad` leaf; calling
    /// this twice without [`Tape::zero_grad`] adds the second pass on top.
    pub fn backward(&self, loss: Var<'_, T>) -> Result<()> {
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.id];
        if root.value.len() != 1 {
            return Err(Error::Contract(format!(
                "backward() needs a scalar loss, got shape {:?}",
                root.value.shape()
            )));
        }
        let mut grads = GradBuffer::new(&nodes, loss.id + 1);
        grads.seed(loss.id, vec![T::ONE]);
        let mut leaf_grads: Vec<(usize, Vec<T>)> = Vec::new();
        for id in (0..=loss.id).rev() {
            let Some(g) = grads.take(id) else { continue };
            let node = &nodes[id];
            if let Op::Leaf = node.op {
                if node.requires_grad {
                    leaf_grads.push((id, g));
                }
                continue;
            }
            ops::backward(&node.op, &node.value, &g, &nodes, &mut grads);
        }
        drop(nodes);
        let mut nodes = self.nodes.borrow_mut();
        for (id, g) in leaf_grads {
            let node = &mut nodes[id];
            match &mut node.grad {
                Some(acc) => {
                    for (a, v) in acc.data_mut().iter_mut().zip(g) {
                        *a += v;
                    }
                }
                None => {
                    node.grad = Some(Tensor::new(node.value.shape().to_vec(), g)?);
                }
            }
        }
        Ok(())
    }

    pub fn zero_grad(&self) {
        for node in self.nodes.borrow_mut().iter_mut() {
            node.grad = None;
        }
    }
}

/// Gradient accumulators indexed by node id, allocated lazily.
pub(crate) struct GradBuffer<'a, T: Scalar> {
    nodes: &'a [Node<T>],
    slots: Vec<Option<Vec<T>>>,
}

impl<'a, T: Scalar> GradBuffer<'a, T> {
    fn new(nodes: &'a [Node<T>], len: usize) -> Self {
        Self {
            nodes,
            slots: (0..len).map(|_| None).collect(),
        }
    }

    fn seed(&mut self, id: usize, g: Vec<T>) {
        self.slots[id] = Some(g);
    }

    fn take(&mut self, id: usize) -> Option<Vec<T>> {
        self.slots[id].take()
    }

    /// Accumulator for node `id`, or `None` when it does not need gradient.
    pub(crate) fn slot(&mut self, id: usize) -> Option<&mut [T]> {
        let node = &self.nodes[id];
        if !node.needs_grad {
            return None;
        }
        let len = node.value.len();
        Some(self.slots[id].get_or_insert_with(|| vec![T::ZERO; len]))
    }
}

impl<'t, T: Scalar> Var<'t, T> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn numel(&self) -> usize {
        self.tape.nodes.borrow()[self.id].value.len()
    }

    /// Borrow the forward value. Do not hold across op calls on the same tape.
    pub fn value_ref(&self) -> Ref<'t, Tensor<T>> {
        Ref::map(self.tape.nodes.borrow(), |n| &n[self.id].value)
    }

    pub fn value(&self) -> Tensor<T> {
        self.value_ref().clone()
    }

    pub fn item(&self) -> Result<T> {
        self.value_ref().item()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }

    /// Accumulated gradient, present after a backward pass on a trainable leaf.
    pub fn grad(&self) -> Option<Tensor<T>> {
        self.tape.nodes.borrow()[self.id].grad.clone()
    }

    pub fn backward(&self) -> Result<()> {
        self.tape.backward(*self)
    }

    /// Same value, cut from the gradient graph.
    pub fn detach(&self) -> Var<'t, T> {
        let v = self.value();
        self.tape.constant(v)
    }

    pub(crate) fn same_tape(&self, other: &Var<'_, T>) -> Result<()> {
        if std::ptr::eq(self.tape, other.tape) {
            Ok(())
        } else {
            Err(Error::Contract(
                "operands recorded on different tapes".into(),
            ))
        }
    }
}
