//! Reverse-mode automatic differentiation over a linear tape.
//!
//! Every primitive appends one node holding its output value, its input node
//! ids and a backward rule. `Tape::backward` replays the rules in reverse
//! execution order, summing contributions for nodes with several consumers.

use std::cell::RefCell;
use std::collections::HashMap;

use super::dense::Tensor;
use super::element::Element;
use crate::error::{Error, Result};

/// Index of a trainable parameter inside a [`ParamStore`](super::params::ParamStore).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

/// What a backward rule sees.
pub struct BackwardArgs<'a, T: Element> {
    pub inputs: &'a [&'a Tensor<T>],
    pub output: &'a Tensor<T>,
    pub grad_output: &'a [T],
    /// Whether each input needs a gradient; rules may skip the others.
    pub needs_grad: &'a [bool],
}

/// Returns one optional gradient buffer per input, in input order.
pub type BackwardFn<T> = Box<dyn Fn(&BackwardArgs<'_, T>) -> Vec<Option<Vec<T>>>>;

struct Node<T: Element> {
    op: &'static str,
    value: Tensor<T>,
    inputs: Vec<usize>,
    requires_grad: bool,
    backward: Option<BackwardFn<T>>,
    param: Option<ParamId>,
}

/// Recording of executed operations. Owned by a single execution stream.
pub struct Tape<T: Element> {
    nodes: RefCell<Vec<Node<T>>>,
}

/// Handle to a value recorded on a tape.
pub struct Var<'t, T: Element> {
    tape: &'t Tape<T>,
    id: usize,
}

impl<T: Element> Clone for Var<'_, T> {
    fn clone(&self) -> Self {
        *self
    }
}

impl<T: Element> Copy for Var<'_, T> {}

impl<T: Element> std::fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var({}, {:?})", self.id, self.shape())
    }
}

impl<T: Element> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Element> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
        }
    }

    fn push(&self, node: Node<T>) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(node);
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    /// A leaf that receives a gradient.
    pub fn input(&self, value: Tensor<T>) -> Var<'_, T> {
        self.leaf(value, true, None)
    }

    /// A leaf treated as a constant.
    pub fn constant(&self, value: Tensor<T>) -> Var<'_, T> {
        self.leaf(value, false, None)
    }

    /// A leaf bound to a stored parameter; its gradient is reported under `id`.
    pub fn param(&self, id: ParamId, value: Tensor<T>) -> Var<'_, T> {
        self.leaf(value, true, Some(id))
    }

    fn leaf(&self, value: Tensor<T>, requires_grad: bool, param: Option<ParamId>) -> Var<'_, T> {
        self.push(Node {
            op: "leaf",
            value,
            inputs: Vec::new(),
            requires_grad,
            backward: None,
            param,
        })
    }

    /// Records an operation whose value has already been computed.
    ///
    /// Primitive ops go through here, and so can user-defined ones.
    pub fn record<'t>(
        &'t self,
        op: &'static str,
        inputs: &[Var<'t, T>],
        value: Tensor<T>,
        backward: BackwardFn<T>,
    ) -> Var<'t, T> {
        for v in inputs {
            assert!(std::ptr::eq(v.tape, self), "Var from a different tape");
        }
        let requires_grad = {
            let nodes = self.nodes.borrow();
            inputs.iter().any(|v| nodes[v.id].requires_grad)
        };
        self.push(Node {
            op,
            value,
            inputs: inputs.iter().map(|v| v.id).collect(),
            requires_grad,
            backward: requires_grad.then_some(backward),
            param: None,
        })
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Number of recorded nodes produced by `op`.
    pub fn count_ops(&self, op: &str) -> usize {
        self.nodes.borrow().iter().filter(|n| n.op == op).count()
    }

    /// Propagates d(loss)/d(node) to every node that requires a gradient.
    pub fn backward(&self, loss: Var<'_, T>) -> Result<Gradients<T>> {
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.id];
        if root.value.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                root.value.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = Vec::new();
        grads.resize_with(loss.id + 1, || None);
        grads[loss.id] = Some(vec![T::one()]);

        let mut out = Gradients {
            leaves: HashMap::new(),
            params: Vec::new(),
        };
        for id in (0..=loss.id).rev() {
            let Some(grad) = grads[id].take() else {
                continue;
            };
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            match &node.backward {
                None => {
                    let g = Tensor::new(node.value.shape(), grad)?;
                    if let Some(pid) = node.param {
                        out.params.push((pid, g.clone()));
                    }
                    out.leaves.insert(id, g);
                }
                Some(rule) => {
                    let inputs: Vec<&Tensor<T>> =
                        node.inputs.iter().map(|&i| &nodes[i].value).collect();
                    let needs: Vec<bool> =
                        node.inputs.iter().map(|&i| nodes[i].requires_grad).collect();
                    let input_grads = rule(&BackwardArgs {
                        inputs: &inputs,
                        output: &node.value,
                        grad_output: &grad,
                        needs_grad: &needs,
                    });
                    debug_assert_eq!(input_grads.len(), node.inputs.len(), "{}", node.op);
                    for (&input, g) in node.inputs.iter().zip(input_grads) {
                        let Some(g) = g else { continue };
                        if !nodes[input].requires_grad {
                            continue;
                        }
                        debug_assert_eq!(g.len(), nodes[input].value.numel(), "{}", node.op);
                        match &mut grads[input] {
                            Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, &b)| *a += b),
                            slot @ None => *slot = Some(g),
                        }
                    }
                }
            }
        }
        out.params.sort_by_key(|(pid, _)| *pid);
        Ok(out)
    }
}

impl<'t, T: Element> Var<'t, T> {
    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn id(&self) -> usize {
        self.id
    }

    /// The recorded value (shares storage with the tape).
    pub fn value(&self) -> Tensor<T> {
        self.tape.nodes.borrow()[self.id].value.clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }
}

/// Result of one backward pass.
#[derive(Debug)]
pub struct Gradients<T: Element> {
    leaves: HashMap<usize, Tensor<T>>,
    params: Vec<(ParamId, Tensor<T>)>,
}

impl<T: Element> Gradients<T> {
    /// Gradient for a leaf, if it was reachable from the loss.
    pub fn wrt(&self, var: Var<'_, T>) -> Option<&Tensor<T>> {
        self.leaves.get(&var.id)
    }

    /// Gradients for parameter leaves, ordered by id.
    pub fn params(&self) -> &[(ParamId, Tensor<T>)] {
        &self.params
    }
}
