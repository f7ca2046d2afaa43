//! Reverse-mode automatic differentiation over dense arrays.
//!
//! A [`Tape`] records every operation applied to [`Var`] handles together
//! with a backward rule. Calling [`Var::backward`] on a scalar walks the
//! tape in reverse and returns [`Gradients`] for every node that depends
//! on a leaf created with [`Tape::leaf`].
//!
//! ```
//! use contour_core::autodiff::Tape;
//! use contour_core::tensor::Tensor;
//!
//! let tape = Tape::<f64>::new();
//! let x = tape.leaf(Tensor::from_vec(&[3], vec![1.0, 2.0, 3.0]).unwrap());
//! let loss = x.square().sum();
//! let grads = loss.backward().unwrap();
//! assert_eq!(grads.get(x).unwrap().data(), &[2.0, 4.0, 6.0]);
//! ```
//!
//! Tapes are cheap and meant to be rebuilt for every training step.

mod conv;
mod elementwise;
mod gradcheck;
mod norm;
mod reduce;
mod spatial;

use std::cell::{Cell, RefCell};
use std::fmt;
use std::sync::Arc;

pub use gradcheck::{grad_check, GradCheck, GradCheckReport};
pub use norm::{BatchNormMode, BN_MOMENTUM, BN_VARIANCE_EPS};

use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::Tensor;

/// Guard added to denominators and square roots.
pub const GUARD: f64 = 1e-8;

/// Computes input gradients from the output gradient. The flag slice says
/// which inputs actually need one.
pub(crate) type BackwardFn<T> = Box<dyn Fn(&Tensor<T>, &[bool]) -> Vec<Option<Tensor<T>>>>;

struct Node<T> {
    op: &'static str,
    inputs: Vec<usize>,
    value: Arc<Tensor<T>>,
    requires_grad: bool,
    backward: Option<BackwardFn<T>>,
}

/// Append-only record of a differentiable computation.
pub struct Tape<T> {
    nodes: RefCell<Vec<Node<T>>>,
    fault: Cell<Option<&'static str>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            fault: Cell::new(None),
        }
    }

    /// Scales every gradient produced by operations named `op` by 1.5.
    /// Used to prove that the gradient checker catches broken rules.
    pub fn inject_fault(&self, op: &'static str) {
        self.fault.set(Some(op));
    }

    /// Differentiable input.
    pub fn leaf(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push("leaf", Vec::new(), value, true, None)
    }

    /// Input that never receives a gradient.
    pub fn constant(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push("constant", Vec::new(), value, false, None)
    }

    pub fn scalar(&self, value: T) -> Var<'_, T> {
        self.constant(Tensor::scalar(value))
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(
        &self,
        op: &'static str,
        inputs: Vec<usize>,
        value: Tensor<T>,
        requires_grad: bool,
        backward: Option<BackwardFn<T>>,
    ) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        let id = nodes.len();
        nodes.push(Node {
            op,
            inputs,
            value: Arc::new(value),
            requires_grad,
            backward: if requires_grad { backward } else { None },
        });
        Var { tape: self, id }
    }

    /// Records an operation. The backward rule is dropped when no input
    /// needs a gradient.
    pub(crate) fn record<'t>(
        &'t self,
        op: &'static str,
        inputs: &[Var<'t, T>],
        value: Tensor<T>,
        backward: BackwardFn<T>,
    ) -> Var<'t, T> {
        let requires = {
            let nodes = self.nodes.borrow();
            inputs.iter().any(|v| nodes[v.id].requires_grad)
        };
        let ids = inputs.iter().map(|v| v.id).collect();
        self.push(op, ids, value, requires, Some(backward))
    }

    fn value_of(&self, id: usize) -> Arc<Tensor<T>> {
        Arc::clone(&self.nodes.borrow()[id].value)
    }

    fn requires_grad(&self, id: usize) -> bool {
        self.nodes.borrow()[id].requires_grad
    }

    fn backward_from(&self, root: usize) -> Result<Gradients<T>> {
        let nodes = self.nodes.borrow();
        let root_value = &nodes[root].value;
        if root_value.len() != 1 {
            return Err(Error::invalid(
                "backward",
                format!("loss must be scalar, got shape {:?}", root_value.shape()),
            ));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..=root).map(|_| None).collect();
        grads[root] = Some(Tensor::ones(root_value.shape()));
        let fault = self.fault.get();

        for id in (0..=root).rev() {
            let node = &nodes[id];
            let Some(rule) = node.backward.as_ref() else {
                continue;
            };
            let Some(g) = grads[id].take() else {
                continue;
            };
            let needs: Vec<bool> = node
                .inputs
                .iter()
                .map(|&i| nodes[i].requires_grad)
                .collect();
            let input_grads = rule(&g, &needs);
            grads[id] = Some(g);
            for ((&input, need), ig) in node.inputs.iter().zip(&needs).zip(input_grads) {
                let (true, Some(mut ig)) = (*need, ig) else {
                    continue;
                };
                if fault == Some(node.op) {
                    let k = T::from_f64(1.5);
                    ig.data_mut().iter_mut().for_each(|x| *x = *x * k);
                }
                debug_assert_eq!(ig.shape(), nodes[input].value.shape(), "{}", node.op);
                match &mut grads[input] {
                    Some(acc) => acc
                        .data_mut()
                        .iter_mut()
                        .zip(ig.data())
                        .for_each(|(a, &b)| *a = *a + b),
                    slot @ None => *slot = Some(ig),
                }
            }
        }
        Ok(Gradients { grads })
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t, T> {
    tape: &'t Tape<T>,
    id: usize,
}

impl<T: Real> fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("shape", &self.shape())
            .finish()
    }
}

impl<'t, T: Real> Var<'t, T> {
    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn id(&self) -> usize {
        self.id
    }

    /// Forward value (shared, immutable).
    pub fn value(&self) -> Arc<Tensor<T>> {
        self.tape.value_of(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn len(&self) -> usize {
        self.tape.nodes.borrow()[self.id].value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.requires_grad(self.id)
    }

    /// Value of a single-element variable.
    pub fn item(&self) -> T {
        self.value().data()[0]
    }

    /// Constant copy of this value; gradients do not flow through it.
    pub fn detach(&self) -> Var<'t, T> {
        let v = (*self.value()).clone();
        self.tape.constant(v)
    }

    pub fn backward(&self) -> Result<Gradients<T>> {
        self.tape.backward_from(self.id)
    }
}

/// Gradients produced by one backward pass.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    /// Gradient of the loss with respect to `v`, if `v` was reachable.
    pub fn get(&self, v: Var<'_, T>) -> Option<&Tensor<T>> {
        self.grads.get(v.id).and_then(|g| g.as_ref())
    }

    /// Gradient of `v`, or zeros when the loss does not depend on it.
    pub fn get_or_zeros(&self, v: Var<'_, T>) -> Tensor<T> {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(&v.shape()))
    }
}
