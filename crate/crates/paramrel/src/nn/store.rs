//! Named parameter storage.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::nn::tape::{Tape, Var};
use crate::nn::tensor::Tensor;

/// Map from parameter name to tensor. BTreeMap keeps iteration order
/// lexicographic, which makes optimizer updates and checkpoints
/// reproducible run to run.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    params: BTreeMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    pub fn insert(&mut self, name: &str, tensor: Tensor) -> Result<()> {
        if self.params.contains_key(name) {
            return Err(Error::Usage(format!("duplicate parameter name `{name}`")));
        }
        self.params.insert(name.to_string(), tensor);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name)
    }

    /// Mutable access to a parameter's values; the shape stays fixed because
    /// `Tensor` exposes no shape mutator.
    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.params.get_mut(name)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.params.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.params.keys()
    }

    pub fn total_values(&self) -> usize {
        self.params.values().map(|t| t.len()).sum()
    }
}

/// Tape handles for every parameter, staged at the start of a step.
pub struct VarMap {
    vars: BTreeMap<String, Var>,
}

impl VarMap {
    /// Insert every parameter as a leaf on the tape.
    pub fn stage(tape: &mut Tape, store: &ParamStore) -> Self {
        let mut vars = BTreeMap::new();
        for (name, tensor) in store.iter() {
            vars.insert(name.clone(), tape.leaf_tensor(tensor));
        }
        VarMap { vars }
    }

    pub fn get(&self, name: &str) -> Var {
        *self
            .vars
            .get(name)
            .unwrap_or_else(|| panic!("parameter `{name}` not staged"))
    }

    /// Pull gradients off the tape, aligned with the store.
    pub fn extract_grads(
        &self,
        grads: &crate::nn::tape::Gradients,
        store: &ParamStore,
    ) -> BTreeMap<String, Tensor> {
        let mut out = BTreeMap::new();
        for (name, tensor) in store.iter() {
            let g = grads.get(self.get(name));
            out.insert(
                name.clone(),
                Tensor::new(tensor.shape().to_vec(), g.to_vec()).expect("grad shape"),
            );
        }
        out
    }
}
