use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

use super::{NumericsError, Tensor};

/// Handle of a registered parameter.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ParamId(pub usize);

#[derive(Clone, Debug)]
pub struct Param<F> {
    pub name: String,
    pub value: Tensor<F>,
}

/// Named trainable tensors. Each name is registered exactly once.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<F> {
    params: Vec<Param<F>>,
    by_name: HashMap<String, ParamId>,
}

impl<F: Scalar> ParamStore<F> {
    pub fn new() -> Self {
        Self {
            params: Vec::new(),
            by_name: HashMap::new(),
        }
    }

    pub fn register(&mut self, name: impl Into<String>, value: Tensor<F>) -> Result<ParamId, NumericsError> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(NumericsError::DuplicateParam(name));
        }
        let id = ParamId(self.params.len());
        self.by_name.insert(name.clone(), id);
        self.params.push(Param { name, value });
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<F> {
        &self.params[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<F> {
        &mut self.params[id.0].value
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param<F>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }
}

/// Dense gradient buffers aligned with a [`ParamStore`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients<F> {
    buffers: Vec<Vec<F>>,
}

impl<F: Scalar> Gradients<F> {
    pub fn zeros_like(store: &ParamStore<F>) -> Self {
        Self {
            buffers: store
                .params
                .iter()
                .map(|p| vec![F::zero(); p.value.numel()])
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.buffers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buffers.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &[F] {
        &self.buffers[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut [F] {
        &mut self.buffers[id.0]
    }

    pub fn add_to(&mut self, id: ParamId, grad: &[F], scale: F) {
        let buf = &mut self.buffers[id.0];
        debug_assert_eq!(buf.len(), grad.len());
        for (b, &g) in buf.iter_mut().zip(grad) {
            *b += scale * g;
        }
    }

    /// Elementwise sum; callers fix the merge order to keep results reproducible.
    pub fn accumulate(&mut self, other: &Gradients<F>) {
        for (a, b) in self.buffers.iter_mut().zip(&other.buffers) {
            for (x, &y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn clear(&mut self) {
        for b in &mut self.buffers {
            b.iter_mut().for_each(|v| *v = F::zero());
        }
    }

    pub fn max_abs(&self) -> F {
        self.buffers
            .iter()
            .flatten()
            .fold(F::zero(), |m, v| m.max(v.abs()))
    }
}
