//! Named parameter store with trainability flags.

use crate::array::Array;
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};
use std::collections::BTreeMap;

/// One named parameter tensor.
#[derive(Clone, Debug)]
pub struct ParamEntry<S: Scalar> {
    pub value: Array<S>,
    pub trainable: bool,
}

/// All parameters of a model, keyed by dotted path. Iteration order is the
/// path order, so anything derived from a walk over the store is stable.
#[derive(Clone, Debug, Default)]
pub struct ModelParams<S: Scalar> {
    entries: BTreeMap<String, ParamEntry<S>>,
}

impl<S: Scalar> ModelParams<S> {
    pub fn new() -> Self {
        ModelParams {
            entries: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, path: impl Into<String>, value: Array<S>, trainable: bool) {
        self.entries
            .insert(path.into(), ParamEntry { value, trainable });
    }

    pub fn get(&self, path: &str) -> Option<&ParamEntry<S>> {
        self.entries.get(path)
    }

    pub fn get_mut(&mut self, path: &str) -> Option<&mut ParamEntry<S>> {
        self.entries.get_mut(path)
    }

    pub fn contains(&self, path: &str) -> bool {
        self.entries.contains_key(path)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &ParamEntry<S>)> {
        self.entries.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut ParamEntry<S>)> {
        self.entries.iter_mut()
    }

    /// Marks every parameter whose path starts with `prefix` as trainable
    /// or frozen. Returns how many entries matched.
    pub fn set_trainable_prefix(&mut self, prefix: &str, trainable: bool) -> usize {
        let mut hits = 0;
        for (path, entry) in self.entries.iter_mut() {
            if path.starts_with(prefix) {
                entry.trainable = trainable;
                hits += 1;
            }
        }
        hits
    }

    /// Total number of scalar parameters.
    pub fn param_count(&self) -> usize {
        self.entries.values().map(|e| e.value.len()).sum()
    }

    /// Number of scalar parameters under a path prefix.
    pub fn param_count_prefix(&self, prefix: &str) -> usize {
        self.entries
            .iter()
            .filter(|(p, _)| p.starts_with(prefix))
            .map(|(_, e)| e.value.len())
            .sum()
    }

    /// Pushes every parameter onto the tape as a leaf, returning the
    /// path-to-var binding for this forward pass.
    pub fn bind_all(&self, tape: &mut Tape<S>) -> BTreeMap<String, Var> {
        let mut bound = BTreeMap::new();
        for (path, entry) in &self.entries {
            bound.insert(path.clone(), tape.leaf(entry.value.clone()));
        }
        bound
    }

    /// Casts every entry to another scalar type (used by gradient checks).
    pub fn cast<T: Scalar>(&self) -> ModelParams<T> {
        let mut out = ModelParams::new();
        for (path, entry) in &self.entries {
            out.insert(path.clone(), entry.value.cast::<T>(), entry.trainable);
        }
        out
    }
}
