//! Named tensor storage for parameters, running statistics and gradients.

use sha2::{Digest, Sha256};

use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Index of a tensor inside a [`TensorStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct TensorId(pub(crate) usize);

#[derive(Clone, Debug, PartialEq)]
pub struct TensorStore<S> {
    names: Vec<String>,
    tensors: Vec<Tensor<S>>,
    decay: Vec<bool>,
}

impl<S: Scalar> Default for TensorStore<S> {
    fn default() -> Self {
        Self {
            names: Vec::new(),
            tensors: Vec::new(),
            decay: Vec::new(),
        }
    }
}

impl<S: Scalar> TensorStore<S> {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a tensor. `decay` marks it for weight decay.
    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor<S>, decay: bool) -> TensorId {
        let name = name.into();
        debug_assert!(!self.names.contains(&name), "duplicate tensor name {name}");
        self.names.push(name);
        self.tensors.push(tensor);
        self.decay.push(decay);
        TensorId(self.tensors.len() - 1)
    }

    pub fn get(&self, id: TensorId) -> &Tensor<S> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: TensorId) -> &mut Tensor<S> {
        &mut self.tensors[id.0]
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn find(&self, name: &str) -> Option<TensorId> {
        self.names.iter().position(|n| n == name).map(TensorId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<S>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn tensors(&self) -> &[Tensor<S>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<S>] {
        &mut self.tensors
    }

    pub fn decays(&self, id: TensorId) -> bool {
        self.decay[id.0]
    }

    pub fn decay_mask(&self) -> &[bool] {
        &self.decay
    }

    /// Same names and shapes, all entries zero.
    pub fn zeros_like(&self) -> Self {
        Self {
            names: self.names.clone(),
            tensors: self
                .tensors
                .iter()
                .map(|t| Tensor::zeros(t.shape()))
                .collect(),
            decay: self.decay.clone(),
        }
    }

    pub fn shapes(&self) -> Vec<(String, Vec<usize>)> {
        self.iter()
            .map(|(n, t)| (n.to_string(), t.shape().to_vec()))
            .collect()
    }

    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::all_finite)
    }

    /// Feeds names, shapes and exact bit patterns into `hasher`.
    pub fn hash_into(&self, hasher: &mut Sha256) {
        for (name, t) in self.iter() {
            hasher.update(name.as_bytes());
            hasher.update([0u8]);
            for d in t.shape() {
                hasher.update((*d as u64).to_le_bytes());
            }
            for v in t.data() {
                hasher.update(v.le_bytes());
            }
        }
    }
}

pub fn hex_digest(hasher: Sha256) -> String {
    hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}
