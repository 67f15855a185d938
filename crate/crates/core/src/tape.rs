//! Define-by-run reverse-mode automatic differentiation.
//!
//! A [`Tape`] records every operation of one forward pass. Each node stores
//! its value; each non-leaf node stores a [`GradRecord`] whose closure
//! captures whatever activations its backward rule needs. [`Tape::backward`]
//! walks the records once, in reverse creation order, which is a valid
//! topological order because parents always precede children.
//!
//! The tape is confined to one logical execution context; it is rebuilt from
//! scratch for every training step.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Handle to a node on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Accumulates gradient contributions flowing to parent nodes.
pub struct GradSink<'a, T: Scalar> {
    grads: &'a mut [Option<Tensor<T>>],
}

impl<'a, T: Scalar> GradSink<'a, T> {
    /// Add `grad` into the slot for node `idx`.
    pub fn add(&mut self, idx: usize, grad: Tensor<T>) {
        match &mut self.grads[idx] {
            Some(acc) => acc.add_assign_scaled(&grad, T::ONE),
            slot @ None => *slot = Some(grad),
        }
    }
}

type BackwardFn<T> = Box<dyn FnOnce(&[Tensor<T>], &Tensor<T>, &mut GradSink<T>)>;

/// One recorded operation: output node id, tag, parent ids, and the backward
/// rule with its saved activations.
pub struct GradRecord<T: Scalar> {
    pub out: usize,
    pub tag: &'static str,
    pub parents: Vec<usize>,
    backward: Option<BackwardFn<T>>,
}

pub struct Tape<T: Scalar> {
    values: Vec<Tensor<T>>,
    records: Vec<GradRecord<T>>,
}

/// Gradients for every node of a tape after [`Tape::backward`].
pub struct Grads<T: Scalar> {
    slots: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Grads<T> {
    /// Gradient for a leaf; `None` if the loss does not depend on it.
    /// Interior gradients are discarded during the sweep.
    pub fn get(&self, var: Var) -> Option<&Tensor<T>> {
        self.slots[var.0].as_ref()
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor<T>> {
        self.slots[var.0].take()
    }
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape {
            values: Vec::new(),
            records: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Record an input or parameter node.
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        let id = self.values.len();
        self.values.push(value);
        self.records.push(GradRecord {
            out: id,
            tag: "leaf",
            parents: Vec::new(),
            backward: None,
        });
        Var(id)
    }

    pub fn value(&self, var: Var) -> &Tensor<T> {
        &self.values[var.0]
    }

    /// Record a computed node. `backward` receives all node values, the
    /// output gradient, and a sink to accumulate parent gradients into.
    pub(crate) fn push(
        &mut self,
        tag: &'static str,
        parents: Vec<usize>,
        value: Tensor<T>,
        backward: BackwardFn<T>,
    ) -> Var {
        let id = self.values.len();
        debug_assert!(parents.iter().all(|&p| p < id), "tape must stay acyclic");
        self.values.push(value);
        self.records.push(GradRecord {
            out: id,
            tag,
            parents,
            backward: Some(backward),
        });
        Var(id)
    }

    pub(crate) fn push_unary(
        &mut self,
        tag: &'static str,
        parent: Var,
        value: Tensor<T>,
        backward: impl FnOnce(&[Tensor<T>], &Tensor<T>, &mut GradSink<T>) + 'static,
    ) -> Var {
        self.push(tag, vec![parent.0], value, Box::new(backward))
    }

    pub(crate) fn push_binary(
        &mut self,
        tag: &'static str,
        a: Var,
        b: Var,
        value: Tensor<T>,
        backward: impl FnOnce(&[Tensor<T>], &Tensor<T>, &mut GradSink<T>) + 'static,
    ) -> Var {
        self.push(tag, vec![a.0, b.0], value, Box::new(backward))
    }

    /// Reverse sweep from a scalar loss node. Visits each record exactly
    /// once; consumes the backward closures, so a tape can be swept once.
    pub fn backward(&mut self, loss: Var) -> Result<Grads<T>> {
        let loss_val = &self.values[loss.0];
        if loss_val.numel() != 1 {
            return Err(Error::Validation(format!(
                "backward requires a scalar loss, got shape {:?}",
                loss_val.shape()
            )));
        }
        if !loss_val.is_finite() {
            return Err(Error::Eval("loss is not finite".into()));
        }

        let mut slots: Vec<Option<Tensor<T>>> = (0..self.values.len()).map(|_| None).collect();
        slots[loss.0] = Some(Tensor::scalar(T::ONE));

        // Records are taken out so their closures can borrow `self.values`.
        let mut records = std::mem::take(&mut self.records);
        for rec in records.iter_mut().rev() {
            if rec.out > loss.0 {
                continue;
            }
            let Some(grad_out) = slots[rec.out].take() else {
                continue;
            };
            if let Some(backward) = rec.backward.take() {
                // Parents always precede the output, so the sink only ever
                // touches indices below `rec.out`.
                let (done, _) = slots.split_at_mut(rec.out);
                let mut sink = GradSink { grads: done };
                backward(&self.values, &grad_out, &mut sink);
                // Interior gradients are not needed once propagated.
            } else {
                slots[rec.out] = Some(grad_out);
            }
        }
        self.records = records;
        Ok(Grads { slots })
    }
}
