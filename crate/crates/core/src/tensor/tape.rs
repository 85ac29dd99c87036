//! Wengert tape: primitives append nodes during the forward pass and
//! [`Tape::backward`] replays them in exact reverse order.

use std::cell::{Ref, RefCell};
use std::collections::{BTreeMap, HashMap};
use std::rc::Rc;

use super::{Scalar, Tensor};
use crate::error::{Error, Result};
use crate::param::Param;

/// Vector-Jacobian product of one node: given the output cotangent and a
/// mask of which parents need gradients, returns one cotangent per parent.
pub(crate) type Backward<S> = Box<dyn Fn(&Tensor<S>, &[bool]) -> Vec<Option<Tensor<S>>>>;

struct Node<S: Scalar> {
    op: &'static str,
    value: Rc<Tensor<S>>,
    parents: Vec<usize>,
    requires_grad: bool,
    backward: Option<Backward<S>>,
    name: Option<String>,
}

/// Records one forward pass. Discard after calling [`Tape::backward`].
pub struct Tape<S: Scalar> {
    nodes: RefCell<Vec<Node<S>>>,
    grad_enabled: bool,
    checks: bool,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t, S: Scalar> {
    pub(crate) tape: &'t Tape<S>,
    pub(crate) id: usize,
}

impl<S: Scalar> std::fmt::Debug for Var<'_, S> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let nodes = self.tape.nodes.borrow();
        let n = &nodes[self.id];
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("op", &n.op)
            .field("shape", &n.value.shape())
            .finish()
    }
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
            grad_enabled: true,
            checks: false,
        }
    }

    /// A tape that never records backward closures (inference).
    pub fn no_grad() -> Self {
        Tape {
            grad_enabled: false,
            ..Self::new()
        }
    }

    /// Enables the debug-mode checks: every op output is tested for
    /// non-finite values and divisions test for zero denominators.
    pub fn with_checks(mut self) -> Self {
        self.checks = true;
        self
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    pub(crate) fn checks(&self) -> bool {
        self.checks
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// A value that never receives a gradient.
    pub fn constant(&self, value: Tensor<S>) -> Var<'_, S> {
        self.push_leaf(value, false, None)
    }

    /// An anonymous differentiable input.
    pub fn leaf(&self, value: Tensor<S>) -> Var<'_, S> {
        let rg = self.grad_enabled;
        self.push_leaf(value, rg, None)
    }

    /// Registers a named parameter; its gradient is reported under the
    /// parameter's path.
    pub fn param(&self, p: &Param<S>) -> Var<'_, S> {
        let rg = self.grad_enabled && p.trainable;
        self.push_leaf(p.value.clone(), rg, Some(p.name.clone()))
    }

    fn push_leaf(&self, value: Tensor<S>, requires_grad: bool, name: Option<String>) -> Var<'_, S> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            op: "leaf",
            value: Rc::new(value),
            parents: Vec::new(),
            requires_grad,
            backward: None,
            name,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    /// Appends the result of an op. The backward closure is only kept when
    /// at least one parent requires a gradient.
    pub(crate) fn push_op<F>(
        &self,
        op: &'static str,
        value: Tensor<S>,
        parents: &[Var<'_, S>],
        backward: F,
    ) -> Result<Var<'_, S>>
    where
        F: Fn(&Tensor<S>, &[bool]) -> Vec<Option<Tensor<S>>> + 'static,
    {
        if self.checks && !value.all_finite() {
            return Err(Error::NonFinite { op });
        }
        let mut nodes = self.nodes.borrow_mut();
        let parent_ids: Vec<usize> = parents.iter().map(|p| p.id).collect();
        let requires_grad =
            self.grad_enabled && parent_ids.iter().any(|&p| nodes[p].requires_grad);
        nodes.push(Node {
            op,
            value: Rc::new(value),
            parents: if requires_grad { parent_ids } else { Vec::new() },
            requires_grad,
            backward: if requires_grad {
                Some(Box::new(backward))
            } else {
                None
            },
            name: None,
        });
        Ok(Var {
            tape: self,
            id: nodes.len() - 1,
        })
    }

    pub(crate) fn value_of(&self, id: usize) -> Rc<Tensor<S>> {
        self.nodes.borrow()[id].value.clone()
    }

    pub(crate) fn requires_grad_of(&self, id: usize) -> bool {
        self.nodes.borrow()[id].requires_grad
    }

    /// Reverse sweep from a scalar `loss`.
    ///
    /// Every named parameter on the tape receives an entry in the result;
    /// parameters the loss does not depend on get zeros.
    pub fn backward(&self, loss: Var<'_, S>) -> Result<Gradients<S>> {
        if !std::ptr::eq(loss.tape, self) {
            return Err(Error::NotOnTape);
        }
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.id];
        if root.value.numel() != 1 {
            return Err(Error::NotScalar(root.value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor<S>>> = (0..=loss.id).map(|_| None).collect();
        grads[loss.id] = Some(Tensor::full(root.value.shape(), S::one()));

        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            let Some(bw) = node.backward.as_ref() else {
                continue;
            };
            let Some(g) = grads[id].take() else {
                continue;
            };
            let mask: Vec<bool> = node
                .parents
                .iter()
                .map(|&p| nodes[p].requires_grad)
                .collect();
            let parent_grads = bw(&g, &mask);
            debug_assert_eq!(parent_grads.len(), node.parents.len(), "{}", node.op);
            for ((&p, pg), &need) in node.parents.iter().zip(parent_grads).zip(&mask) {
                let Some(pg) = pg else { continue };
                if !need {
                    continue;
                }
                debug_assert_eq!(pg.shape(), nodes[p].value.shape(), "{} -> parent", node.op);
                match &mut grads[p] {
                    Some(acc) => {
                        for (a, b) in acc.data_mut().iter_mut().zip(pg.data()) {
                            *a = *a + *b;
                        }
                    }
                    slot @ None => *slot = Some(pg),
                }
            }
        }

        let mut out = Gradients::default();
        for (id, node) in nodes.iter().enumerate().take(loss.id + 1) {
            if !node.requires_grad || node.backward.is_some() {
                continue;
            }
            let g = grads[id]
                .take()
                .unwrap_or_else(|| Tensor::zeros(node.value.shape()));
            match &node.name {
                Some(name) => match out.by_name.get_mut(name) {
                    // the same parameter registered twice accumulates
                    Some(acc) => {
                        for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                            *a = *a + *b;
                        }
                    }
                    None => {
                        out.by_name.insert(name.clone(), g);
                    }
                },
                None => {
                    out.by_id.insert(id, g);
                }
            }
        }
        // named leaves registered after the loss still get zero entries
        for node in nodes.iter().skip(loss.id + 1) {
            if let (Some(name), true, None) = (&node.name, node.requires_grad, &node.backward) {
                out.by_name
                    .entry(name.clone())
                    .or_insert_with(|| Tensor::zeros(node.value.shape()));
            }
        }
        Ok(out)
    }
}

/// Gradients produced by one backward pass.
#[derive(Clone, Debug, Default)]
pub struct Gradients<S: Scalar> {
    by_name: BTreeMap<String, Tensor<S>>,
    by_id: HashMap<usize, Tensor<S>>,
}

impl<S: Scalar> Gradients<S> {
    pub fn get(&self, name: &str) -> Option<&Tensor<S>> {
        self.by_name.get(name)
    }

    /// Gradient of an anonymous leaf created by [`Tape::leaf`].
    pub fn wrt(&self, v: Var<'_, S>) -> Option<&Tensor<S>> {
        self.by_id.get(&v.id)
    }

    pub fn named(&self) -> impl Iterator<Item = (&str, &Tensor<S>)> {
        self.by_name.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.by_name.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_name.is_empty()
    }

    pub fn insert(&mut self, name: &str, g: Tensor<S>) {
        self.by_name.insert(name.to_string(), g);
    }

    /// Sums named gradients from another pass (data-parallel shards).
    pub fn merge(&mut self, other: Gradients<S>) {
        for (k, g) in other.by_name {
            match self.by_name.get_mut(&k) {
                Some(acc) => {
                    for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                        *a = *a + *b;
                    }
                }
                None => {
                    self.by_name.insert(k, g);
                }
            }
        }
    }

    pub fn scale(&mut self, s: S) {
        for g in self.by_name.values_mut() {
            for v in g.data_mut() {
                *v = *v * s;
            }
        }
    }
}

impl<'t, S: Scalar> Var<'t, S> {
    pub fn tape(&self) -> &'t Tape<S> {
        self.tape
    }

    /// Shared handle to the forward value.
    pub fn value(&self) -> Rc<Tensor<S>> {
        self.tape.value_of(self.id)
    }

    /// Borrowed view of the forward value; do not hold across op calls.
    pub fn with_value<R>(&self, f: impl FnOnce(&Tensor<S>) -> R) -> R {
        let nodes: Ref<'_, Vec<Node<S>>> = self.tape.nodes.borrow();
        f(&nodes[self.id].value)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.with_value(|v| v.shape().to_vec())
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.requires_grad_of(self.id)
    }

    pub fn id(&self) -> usize {
        self.id
    }
}
