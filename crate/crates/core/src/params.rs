//! Flat parameter storage shared by all model layers.
//!
//! Layers hold [`ParamId`] handles into a [`ParamStore`]; a forward pass
//! leafs every parameter onto the tape once, so the optimizer can walk the
//! store and the tape's gradients in lockstep. Insertion order is stable,
//! which makes checkpoints and the optimizer state position-addressable.

use crate::tape::{Tape, Var};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamId(pub usize);

#[derive(Clone, Debug, Default)]
pub struct ParamStore<F: Scalar> {
    entries: Vec<(String, Tensor<F>)>,
}

impl<F: Scalar> ParamStore<F> {
    pub fn new() -> Self {
        ParamStore { entries: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, t: Tensor<F>) -> ParamId {
        self.entries.push((name.into(), t));
        ParamId(self.entries.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<F> {
        &self.entries[id.0].1
    }

    pub fn set(&mut self, id: ParamId, t: Tensor<F>) {
        debug_assert_eq!(self.entries[id.0].1.shape(), t.shape());
        self.entries[id.0].1 = t;
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].0
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<F>)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    /// Total number of trainable scalars.
    pub fn scalar_count(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.len()).sum()
    }

    /// Leaf every parameter onto a tape; index the result by `ParamId.0`.
    pub fn leaf_all(&self, tape: &mut Tape<F>) -> Vec<Var> {
        self.entries.iter().map(|(_, t)| tape.leaf(t.clone())).collect()
    }

    /// Elementwise copy of another store's values (shapes must match).
    pub fn copy_values_from(&mut self, other: &ParamStore<F>) {
        assert_eq!(self.entries.len(), other.entries.len());
        for (dst, src) in self.entries.iter_mut().zip(&other.entries) {
            debug_assert_eq!(dst.1.shape(), src.1.shape());
            dst.1 = src.1.clone();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ids_are_stable_and_counts_add_up() {
        let mut ps = ParamStore::<f32>::new();
        let a = ps.add("w", Tensor::zeros(&[2, 3]));
        let b = ps.add("b", Tensor::zeros(&[3]));
        assert_eq!(ps.name(a), "w");
        assert_eq!(ps.get(b).shape(), &[3]);
        assert_eq!(ps.scalar_count(), 9);
    }
}
