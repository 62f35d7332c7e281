//! Reverse-mode autodiff tape.
//!
//! Define-by-run: every operation pushes one node holding the result value,
//! the parent variable ids, and a backward closure mapping the output
//! gradient to one gradient per parent. Nodes are appended in execution
//! order, so every node's parents precede it and the backward sweep is a
//! single reverse iteration over the insertion order.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

type BackFn<F> = Box<dyn Fn(&Tensor<F>) -> Vec<Tensor<F>>>;

struct Node<F: Scalar> {
    value: Tensor<F>,
    parents: Vec<Var>,
    backward: Option<BackFn<F>>,
}

pub struct Tape<F: Scalar> {
    nodes: Vec<Node<F>>,
}

impl<F: Scalar> Default for Tape<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Scalar> Tape<F> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    /// Record an input with no backward rule (parameters, features).
    pub fn leaf(&mut self, value: Tensor<F>) -> Var {
        self.nodes.push(Node { value, parents: Vec::new(), backward: None });
        Var(self.nodes.len() - 1)
    }

    /// Record an operation result. `backward` receives the output gradient
    /// and must return one gradient tensor per parent, in order.
    pub fn push(&mut self, value: Tensor<F>, parents: Vec<Var>, backward: BackFn<F>) -> Var {
        debug_assert!(parents.iter().all(|p| p.0 < self.nodes.len()));
        self.nodes.push(Node { value, parents, backward: Some(backward) });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Reverse sweep from a scalar root; returns per-variable gradients.
    pub fn backward(&self, root: Var) -> Result<Grads<F>> {
        if self.value(root).len() != 1 {
            return Err(Error::Numeric(format!(
                "backward root must be scalar, got shape {:?}",
                self.value(root).shape()
            )));
        }
        self.backward_with_seed(root, Tensor::scalar(F::one()))
    }

    /// Reverse sweep with an explicit output gradient.
    pub fn backward_with_seed(&self, root: Var, seed: Tensor<F>) -> Result<Grads<F>> {
        if seed.shape() != self.value(root).shape() {
            return Err(Error::Shape(format!(
                "seed shape {:?} != root shape {:?}",
                seed.shape(),
                self.value(root).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<F>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(seed);
        // Exact reverse insertion order; parents always precede children.
        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].clone() else { continue };
            let node = &self.nodes[i];
            let Some(back) = &node.backward else { continue };
            let parent_grads = back(&g);
            debug_assert_eq!(parent_grads.len(), node.parents.len());
            for (p, pg) in node.parents.iter().zip(parent_grads) {
                debug_assert_eq!(pg.shape(), self.nodes[p.0].value.shape());
                match &mut grads[p.0] {
                    Some(acc) => {
                        let sum = acc.add(&pg)?;
                        *acc = sum;
                    }
                    slot @ None => *slot = Some(pg),
                }
            }
        }
        Ok(Grads { grads })
    }
}

/// Gradients produced by one backward sweep.
pub struct Grads<F: Scalar> {
    grads: Vec<Option<Tensor<F>>>,
}

impl<F: Scalar> Grads<F> {
    /// Gradient for a variable; `None` if the root does not depend on it.
    pub fn get(&self, v: Var) -> Option<&Tensor<F>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient or a zero tensor of the given shape.
    pub fn get_or_zeros(&self, v: Var, shape: &[usize]) -> Tensor<F> {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(shape))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops;

    #[test]
    fn linear_chain_gradient() {
        // y = 3x, dy/dx = 3
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::new(&[3], vec![1.0, -2.0, 0.5]).unwrap());
        let y = ops::scale(&mut tape, x, 3.0);
        let s = ops::sum_all(&mut tape, y);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[3.0, 3.0, 3.0]);
    }

    #[test]
    fn fan_out_accumulates() {
        // s = sum(x * x) -> ds/dx = 2x
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::new(&[2], vec![3.0, -4.0]).unwrap());
        let y = ops::mul(&mut tape, x, x).unwrap();
        let s = ops::sum_all(&mut tape, y);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[6.0, -8.0]);
    }

    #[test]
    fn non_scalar_root_rejected() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::zeros(&[2]));
        assert!(tape.backward(x).is_err());
    }
}
