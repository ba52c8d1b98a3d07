//! The reverse-mode tape.

use std::rc::Rc;

use super::{Scalar, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

pub(crate) struct Node<T> {
    pub value: Rc<Tensor<T>>,
    pub parents: Vec<Var>,
    /// Maps the upstream gradient to one gradient per parent, in order.
    /// `None` for leaves and constants.
    pub back: Option<Box<dyn Fn(&Tensor<T>) -> Vec<Tensor<T>>>>,
}

/// Records primitive operations for one forward pass.
///
/// With `grad` disabled the tape still evaluates forward values but records
/// no backward closures, which keeps large inference passes lean.
pub struct Tape<T> {
    pub(crate) nodes: Vec<Node<T>>,
    grad_enabled: bool,
}

/// Gradients produced by one backward sweep, indexed by [`Var`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of the loss w.r.t. `v`; zeros if the loss does not depend on it.
    pub fn grad(&self, v: Var, shape: &[usize]) -> Tensor<T> {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => Tensor::zeros(shape),
        }
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads[v.0].take()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            grad_enabled: true,
        }
    }

    /// Forward-only tape: values are computed, backward closures are skipped.
    pub fn no_grad() -> Self {
        Tape {
            nodes: Vec::new(),
            grad_enabled: false,
        }
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Insert a differentiable leaf (parameter or input).
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.push(value, vec![], None)
    }

    /// Insert a constant; gradients are still accumulated but normally unused.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, vec![], None)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn value_rc(&self, v: Var) -> Rc<Tensor<T>> {
        Rc::clone(&self.nodes[v.0].value)
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub(crate) fn push(
        &mut self,
        value: Tensor<T>,
        parents: Vec<Var>,
        back: Option<Box<dyn Fn(&Tensor<T>) -> Vec<Tensor<T>>>>,
    ) -> Var {
        let back = if self.grad_enabled { back } else { None };
        self.nodes.push(Node {
            value: Rc::new(value),
            parents,
            back,
        });
        Var(self.nodes.len() - 1)
    }

    /// Register a custom differentiable node. `back` receives the upstream
    /// gradient and must return one gradient per parent, in order.
    pub fn custom(
        &mut self,
        parents: Vec<Var>,
        value: Tensor<T>,
        back: impl Fn(&Tensor<T>) -> Vec<Tensor<T>> + 'static,
    ) -> Var {
        self.push(value, parents, Some(Box::new(back)))
    }

    /// Reverse sweep from a scalar loss. The tape itself is not mutated, so
    /// repeated sweeps yield identical gradients.
    pub fn backward(&self, loss: Var) -> Gradients<T> {
        assert!(
            self.grad_enabled,
            "backward on a no-grad tape"
        );
        assert_eq!(
            self.nodes[loss.0].value.numel(),
            1,
            "backward requires a scalar loss, got shape {:?}",
            self.nodes[loss.0].value.shape()
        );
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.nodes[loss.0].value.shape(), T::one()));

        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            // Leaves keep their gradient for the caller; interior gradients
            // are consumed as the sweep passes them.
            let Some(back) = &node.back else { continue };
            let Some(gout) = grads[id].take() else { continue };
            let parent_grads = back(&gout);
            debug_assert_eq!(parent_grads.len(), node.parents.len());
            for (p, pg) in node.parents.iter().zip(parent_grads) {
                debug_assert_eq!(
                    pg.shape(),
                    self.nodes[p.0].value.shape(),
                    "gradient shape mismatch for parent of node {id}"
                );
                match &mut grads[p.0] {
                    Some(acc) => acc.add_assign(&pg),
                    slot @ None => *slot = Some(pg),
                }
            }
        }
        Gradients { grads }
    }
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Tape::new()
    }
}
