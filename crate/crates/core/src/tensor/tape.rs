use std::cell::RefCell;
use std::fmt;
use std::rc::Rc;

use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Vector-Jacobian product of one recorded node: maps the gradient of the
/// node's output to gradients of its parents (`None` for parents that do not
/// need one).
pub(crate) type BackwardFn<T> = Box<dyn Fn(&[T], &[bool]) -> Vec<Option<Vec<T>>>>;

struct Node<T: Scalar> {
    value: Rc<Tensor<T>>,
    requires_grad: bool,
    parents: Vec<usize>,
    backward: Option<BackwardFn<T>>,
}

/// Append-only record of a differentiable computation.
///
/// A tape is single-threaded and short-lived: build one per forward pass,
/// call [`Tape::backward`], then drop it.
pub struct Tape<T: Scalar = f32> {
    nodes: RefCell<Vec<Node<T>>>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t, T: Scalar = f32> {
    tape: &'t Tape<T>,
    id: usize,
}

impl<T: Scalar> fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
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

    /// Records a leaf. Gradients are tracked when `value.requires_grad()`.
    pub fn leaf(&self, value: Tensor<T>) -> Var<'_, T> {
        let requires_grad = value.requires_grad();
        self.push(value, requires_grad, Vec::new(), None)
    }

    /// Records a leaf that gradients never flow into.
    pub fn constant(&self, mut value: Tensor<T>) -> Var<'_, T> {
        value.set_requires_grad(false);
        self.push(value, false, Vec::new(), None)
    }

    /// Records a parameter leaf by copying its values; gradients are tracked
    /// when the parameter's `requires_grad` flag is set.
    pub fn param(&self, param: &Tensor<T>) -> Var<'_, T> {
        let value = Tensor {
            shape: param.shape.clone(),
            data: param.data.clone(),
            requires_grad: param.requires_grad,
            grad: None,
        };
        let requires_grad = value.requires_grad;
        self.push(value, requires_grad, Vec::new(), None)
    }

    /// Records the result of a custom differentiable operation.
    ///
    /// `backward` receives the gradient of `value` and a mask telling which
    /// parents need gradients; it must return one entry per parent, each the
    /// length of that parent's data. It is dropped unrecorded when no parent
    /// requires a gradient.
    pub fn op<'t, F>(&'t self, value: Tensor<T>, parents: &[Var<'t, T>], backward: F) -> Var<'t, T>
    where
        F: Fn(&[T], &[bool]) -> Vec<Option<Vec<T>>> + 'static,
    {
        let requires_grad = parents.iter().any(|p| p.requires_grad());
        let ids = parents.iter().map(|p| p.id).collect();
        let backward: Option<BackwardFn<T>> = if requires_grad {
            Some(Box::new(backward))
        } else {
            None
        };
        self.push(value, requires_grad, ids, backward)
    }

    fn push(
        &self,
        value: Tensor<T>,
        requires_grad: bool,
        parents: Vec<usize>,
        backward: Option<BackwardFn<T>>,
    ) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        let id = nodes.len();
        nodes.push(Node {
            value: Rc::new(value),
            requires_grad,
            parents,
            backward,
        });
        Var { tape: self, id }
    }

    /// Reverse pass seeded with d(loss)/d(loss) = 1. `loss` must hold a
    /// single element.
    pub fn backward(&self, loss: Var<'_, T>) -> Result<Gradients<T>> {
        let numel = loss.value().numel();
        if numel != 1 {
            return Err(Error::Domain(format!(
                "backward needs a scalar loss, got shape {:?}",
                loss.shape()
            )));
        }
        self.backward_with_seed(loss, vec![T::one()])
    }

    /// Reverse pass seeded with an arbitrary output gradient.
    pub fn backward_with_seed(&self, output: Var<'_, T>, seed: Vec<T>) -> Result<Gradients<T>> {
        assert!(std::ptr::eq(output.tape, self), "variable from another tape");
        let nodes = self.nodes.borrow();
        if seed.len() != nodes[output.id].value.numel() {
            return Err(Error::dim(
                "backward seed",
                nodes[output.id].value.shape(),
                &[seed.len()],
            ));
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; nodes.len()];
        grads[output.id] = Some(seed);

        for id in (0..=output.id).rev() {
            let node = &nodes[id];
            let Some(backward) = &node.backward else {
                continue;
            };
            let Some(out_grad) = grads[id].take() else {
                continue;
            };
            let mask: Vec<bool> = node
                .parents
                .iter()
                .map(|&p| nodes[p].requires_grad)
                .collect();
            let parent_grads = backward(&out_grad, &mask);
            debug_assert_eq!(parent_grads.len(), node.parents.len());
            for ((&pid, g), &needed) in node.parents.iter().zip(parent_grads).zip(&mask) {
                let Some(g) = g else { continue };
                if !needed {
                    continue;
                }
                debug_assert_eq!(g.len(), nodes[pid].value.numel(), "grad size for node {pid}");
                match &mut grads[pid] {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, &b)| *a = *a + b),
                    slot @ None => *slot = Some(g),
                }
            }
        }
        Ok(Gradients { grads })
    }
}

impl<'t, T: Scalar> Var<'t, T> {
    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn id(&self) -> usize {
        self.id
    }

    /// Shared handle to the recorded value.
    pub fn value(&self) -> Rc<Tensor<T>> {
        Rc::clone(&self.tape.nodes.borrow()[self.id].value)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }

    /// Copies the value out as a standalone tensor.
    pub fn to_tensor(&self) -> Tensor<T> {
        let mut t = (*self.value()).clone();
        t.set_requires_grad(false);
        t
    }

    /// The single element of a one-element tensor, as `f64`.
    pub fn item(&self) -> f64 {
        let v = self.value();
        debug_assert_eq!(v.numel(), 1);
        v.data()[0].as_f64()
    }
}

/// Gradients produced by one reverse pass, indexed by recorded node.
pub struct Gradients<T: Scalar> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of the seeded output w.r.t. `var`, when `var` is a leaf that
    /// requires gradients and the output depends on it. Intermediate nodes'
    /// gradients are consumed during the pass.
    pub fn get(&self, var: Var<'_, T>) -> Option<&[T]> {
        self.grads.get(var.id).and_then(|g| g.as_deref())
    }

    /// Same as [`Gradients::get`] but returns zeros for unreached leaves.
    pub fn get_or_zeros(&self, var: Var<'_, T>) -> Vec<T> {
        match self.get(var) {
            Some(g) => g.to_vec(),
            None => vec![T::zero(); var.value().numel()],
        }
    }
}
