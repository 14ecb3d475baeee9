//! Named parameter collections and their binding onto tapes.
//!
//! A [`ParamStore`] owns the trainable tensors of a model in a stable
//! insertion order; that order is the contract for optimizer state and
//! checkpoint layout. Binding a store onto a [`Tape`] yields a
//! [`BoundParams`] handle that maps each parameter to its tape node for
//! one forward pass.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tape::{Gradients, Tape, VarId};
use crate::tensor::TensorBase;

/// Index of a parameter within its store, stable for the store's lifetime.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

/// Ordered, uniquely named collection of trainable tensors.
#[derive(Debug, Clone, Default)]
pub struct ParamStore<S> {
    names: Vec<String>,
    tensors: Vec<TensorBase<S>>,
    index: HashMap<String, usize>,
}

impl<S: Scalar> ParamStore<S> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            tensors: Vec::new(),
            index: HashMap::new(),
        }
    }

    /// Registers a tensor under a unique name. The tensor is marked as a
    /// gradient target.
    pub fn insert(&mut self, name: &str, tensor: TensorBase<S>) -> Result<ParamId> {
        if self.index.contains_key(name) {
            return Err(Error::Autodiff(format!("duplicate parameter name '{name}'")));
        }
        let id = self.tensors.len();
        self.names.push(name.to_string());
        self.tensors.push(tensor.with_grad());
        self.index.insert(name.to_string(), id);
        Ok(ParamId(id))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalar entries across all parameters.
    pub fn param_count(&self) -> usize {
        self.tensors.iter().map(|t| t.numel()).sum()
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn get(&self, name: &str) -> Option<&TensorBase<S>> {
        self.index.get(name).map(|&i| &self.tensors[i])
    }

    pub fn name_of(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn tensor(&self, id: ParamId) -> &TensorBase<S> {
        &self.tensors[id.0]
    }

    pub fn tensor_mut(&mut self, id: ParamId) -> &mut TensorBase<S> {
        &mut self.tensors[id.0]
    }

    /// Parameters in insertion order.
    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &TensorBase<S>)> {
        self.names
            .iter()
            .zip(self.tensors.iter())
            .enumerate()
            .map(|(i, (n, t))| (ParamId(i), n.as_str(), t))
    }

    /// Records every parameter on the tape as a gradient target.
    pub fn bind(&self, tape: &mut Tape<S>) -> BoundParams {
        BoundParams {
            vars: self.tensors.iter().map(|t| tape.variable(t)).collect(),
        }
    }

    /// Records every parameter as a constant, for inference passes that
    /// never call backward.
    pub fn bind_frozen(&self, tape: &mut Tape<S>) -> BoundParams {
        BoundParams {
            vars: self.tensors.iter().map(|t| tape.constant(t)).collect(),
        }
    }

    /// Copies gradients from a backward sweep into the parameter tensors,
    /// overwriting whatever gradients were stored before.
    ///
    /// Parameters the root does not depend on receive explicit zeros; it is
    /// an error only when that holds for every parameter, which means the
    /// whole store is detached from the objective.
    pub fn apply_gradients(&mut self, bound: &BoundParams, grads: &Gradients<S>) -> Result<()> {
        if bound.vars.len() != self.tensors.len() {
            return Err(Error::Autodiff(format!(
                "binding covers {} parameters, store has {}",
                bound.vars.len(),
                self.tensors.len()
            )));
        }
        if !self.tensors.is_empty() && bound.vars.iter().all(|&v| grads.get(v).is_none()) {
            return Err(Error::Autodiff(
                "no parameter of this store is reachable from the backward root".into(),
            ));
        }
        for (tensor, &var) in self.tensors.iter_mut().zip(&bound.vars) {
            let grad = match grads.get(var) {
                Some(g) => g.to_vec(),
                None => vec![S::zero(); tensor.numel()],
            };
            tensor.set_grad(grad)?;
        }
        Ok(())
    }

    pub fn clear_grads(&mut self) {
        for t in &mut self.tensors {
            t.clear_grad();
        }
    }
}

/// Tape nodes for one binding of a [`ParamStore`], in store order.
#[derive(Debug, Clone)]
pub struct BoundParams {
    vars: Vec<VarId>,
}

impl BoundParams {
    pub fn var(&self, id: ParamId) -> VarId {
        self.vars[id.0]
    }

    pub fn vars(&self) -> &[VarId] {
        &self.vars
    }
}

/// Runs backward from `root` and writes the resulting gradients into the
/// store. Convenience for the single-store case; with several stores bound
/// to one tape, run [`Tape::backward`] once and apply to each.
pub fn backward_into<S: Scalar>(
    tape: &Tape<S>,
    root: VarId,
    store: &mut ParamStore<S>,
    bound: &BoundParams,
) -> Result<()> {
    let grads = tape.backward(root)?;
    store.apply_gradients(bound, &grads)
}
