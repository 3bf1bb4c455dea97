//! Named parameter tensors, deterministic initialisation and gradient sets.

use crate::tensor::{Real, Shape, Tape, Tensor};
use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
pub struct Param<T> {
    pub name: String,
    pub tensor: Tensor<T>,
}

/// Ordered collection of trainable tensors. Creation order is part of the
/// model's identity: it fixes both the random initialisation stream and the
/// checkpoint layout.
#[derive(Debug, Clone, Default)]
pub struct ParamStore<T> {
    params: Vec<Param<T>>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore { params: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor<T>) -> ParamId {
        self.params.push(Param {
            name: name.into(),
            tensor: tensor.with_grad(),
        });
        ParamId(self.params.len() - 1)
    }

    pub fn zeros(&mut self, name: &str, shape: Shape) -> ParamId {
        self.add(name, Tensor::zeros(shape))
    }

    /// Glorot-uniform initialisation.
    pub fn glorot(&mut self, name: &str, shape: Shape, rng: &mut impl Rng) -> ParamId {
        let limit = (6.0 / (shape.rows + shape.cols) as f64).sqrt();
        let dist = Uniform::new_inclusive(-limit, limit).expect("finite bounds");
        let values = (0..shape.numel()).map(|_| T::real(dist.sample(rng))).collect();
        self.add(name, Tensor::new(shape, values).expect("shape matches"))
    }

    pub fn normal(&mut self, name: &str, shape: Shape, std: f64, rng: &mut impl Rng) -> ParamId {
        let dist = Normal::new(0.0, std).expect("positive std");
        let values = (0..shape.numel()).map(|_| T::real(dist.sample(rng))).collect();
        self.add(name, Tensor::new(shape, values).expect("shape matches"))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param<T>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn tensor(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id.0].tensor
    }

    pub fn tensor_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.params[id.0].tensor
    }

    pub fn num_values(&self) -> usize {
        self.params.iter().map(|p| p.tensor.values().len()).sum()
    }

    pub fn zero_grad(&mut self) {
        self.params.iter_mut().for_each(|p| p.tensor.zero_grad());
    }

    /// Adds a gradient set into each tensor's accumulator.
    pub fn accumulate(&mut self, grads: &Gradients<T>) {
        for (p, g) in self.params.iter_mut().zip(&grads.slots) {
            if let (Some(acc), Some(g)) = (p.tensor.grad_mut(), g) {
                acc.iter_mut().zip(g).for_each(|(a, &b)| *a += b);
            }
        }
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().all(|p| p.tensor.is_finite())
    }
}

/// Per-parameter gradient buffers collected from one or more tapes.
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    slots: Vec<Option<Vec<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn empty(n_params: usize) -> Self {
        Gradients {
            slots: vec![None; n_params],
        }
    }

    pub fn from_tape(tape: &Tape<'_, T>, n_params: usize) -> Self {
        let mut g = Self::empty(n_params);
        for (id, grad) in tape.param_grads() {
            g.add_slice(id, grad);
        }
        g
    }

    pub fn add_slice(&mut self, id: ParamId, grad: &[T]) {
        match &mut self.slots[id.0] {
            Some(acc) => acc.iter_mut().zip(grad).for_each(|(a, &b)| *a += b),
            slot @ None => *slot = Some(grad.to_vec()),
        }
    }

    /// Element-wise sum; fixed call order gives a deterministic reduction.
    pub fn merge(&mut self, other: &Gradients<T>) {
        for (i, g) in other.slots.iter().enumerate() {
            if let Some(g) = g {
                self.add_slice(ParamId(i), g);
            }
        }
    }

    pub fn scale(&mut self, c: f64) {
        let c = T::real(c);
        for g in self.slots.iter_mut().flatten() {
            g.iter_mut().for_each(|v| *v *= c);
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&[T]> {
        self.slots[id.0].as_deref()
    }
}
