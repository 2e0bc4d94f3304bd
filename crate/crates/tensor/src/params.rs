use std::collections::BTreeMap;

use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

/// Handle to a trainable tensor inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(&self) -> usize {
        self.0
    }
}

/// Flat registry of named trainable tensors.
///
/// Names are unique and stable; iteration order is registration order, which
/// keeps optimizer updates and serialization deterministic.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
    by_name: BTreeMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let name = name.into();
        assert!(
            !self.by_name.contains_key(&name),
            "duplicate parameter name {name}"
        );
        let id = ParamId(self.values.len());
        self.by_name.insert(name.clone(), id.0);
        self.names.push(name);
        self.values.push(value);
        id
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn lookup(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied().map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.values.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor)> {
        self.values
            .iter()
            .enumerate()
            .map(|(i, t)| (ParamId(i), self.names[i].as_str(), t))
    }

    /// Total number of scalar entries across all parameters.
    pub fn total_entries(&self) -> usize {
        self.values.iter().map(Tensor::numel).sum()
    }

    /// Replace values from another store with identical layout.
    pub fn load_values(&mut self, other: &ParamStore) -> Result<()> {
        if other.names != self.names {
            return Err(TensorError::Invalid(
                "parameter store layout mismatch".into(),
            ));
        }
        for (dst, src) in self.values.iter_mut().zip(&other.values) {
            if !dst.same_shape(src) {
                return Err(TensorError::Invalid(format!(
                    "parameter shape mismatch: {:?} vs {:?}",
                    dst.shape(),
                    src.shape()
                )));
            }
            *dst = src.clone();
        }
        Ok(())
    }
}

/// Per-parameter gradients produced by one backward pass.
///
/// Parameters the loss never touched read back as zeros.
#[derive(Clone, Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub(crate) fn new(param_count: usize) -> Self {
        Gradients {
            grads: vec![None; param_count],
        }
    }

    pub(crate) fn accumulate(&mut self, id: ParamId, grad: &Tensor) {
        match &mut self.grads[id.0] {
            Some(existing) => existing.add_assign(grad),
            slot => *slot = Some(grad.clone()),
        }
    }

    /// Gradient for `id`, materializing zeros for unreached parameters.
    pub fn get(&self, id: ParamId, store: &ParamStore) -> Tensor {
        match &self.grads[id.0] {
            Some(g) => g.clone(),
            None => {
                let shape = store.get(id).shape();
                Tensor::zeros(shape[0], shape[1])
            }
        }
    }

    pub fn get_ref(&self, id: ParamId) -> Option<&Tensor> {
        self.grads[id.0].as_ref()
    }

    pub fn is_zero(&self, id: ParamId) -> bool {
        match &self.grads[id.0] {
            None => true,
            Some(g) => g.data().iter().all(|&v| v == 0.0),
        }
    }
}
