//! Reverse-mode differentiation over 2-D tensors, plus the LSTM cell and
//! the SGD / Adam optimizers the models train with.
//!
//! Parameters live in a [`ParamStore`]. Each forward pass builds a fresh
//! [`Graph`] that borrows the store, records operations, and on
//! [`Graph::backward`] returns [`Gradients`] keyed by parameter.

mod graph;
mod lstm;
mod optim;

use std::collections::HashMap;
use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use ndarray::{Array2, LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive};
use rand::Rng;

pub use graph::{Gradients, Graph, Var};
pub(crate) use graph::softmax_rows;
pub use lstm::{lstm_cell, lstm_sequence, LstmParams};
pub use optim::{
    adam_step, clip_global_norm, sgd_step, AdamConfig, OptimizerKind, OptimizerState, StepReport,
};

/// Floating-point element type: `f64` for gradient checks, `f32` for training.
pub trait Real:
    Float
    + FromPrimitive
    + ScalarOperand
    + LinalgScalar
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + 'static
{
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("representable constant")
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Value plus the gradient accumulated for it.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    pub value: Array2<T>,
    pub grad: Array2<T>,
}

impl<T: Real> Tensor<T> {
    pub fn new(value: Array2<T>) -> Self {
        let grad = Array2::zeros(value.raw_dim());
        Self { value, grad }
    }

    pub fn shape(&self) -> [usize; 2] {
        [self.value.nrows(), self.value.ncols()]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named, ordered parameter table.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore<T> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
    lookup: HashMap<String, usize>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            tensors: Vec::new(),
            lookup: HashMap::new(),
        }
    }

    /// Registers a parameter. Names must be unique.
    pub fn add(&mut self, name: impl Into<String>, value: Array2<T>) -> ParamId {
        let name = name.into();
        assert!(
            !self.lookup.contains_key(&name),
            "duplicate parameter name {name}"
        );
        let id = self.tensors.len();
        self.lookup.insert(name.clone(), id);
        self.names.push(name);
        self.tensors.push(Tensor::new(value));
        ParamId(id)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.lookup.get(name).copied().map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Array2<T> {
        &self.tensors[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Array2<T> {
        &mut self.tensors[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &Array2<T> {
        &self.tensors[id.0].grad
    }

    pub fn tensor(&self, id: ParamId) -> &Tensor<T> {
        &self.tensors[id.0]
    }

    pub(crate) fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn zero_grads(&mut self) {
        for t in &mut self.tensors {
            t.grad.fill(T::zero());
        }
    }

    /// Adds `grads` into the stored gradients.
    pub fn accumulate(&mut self, grads: &Gradients<T>) {
        for (id, g) in grads.iter() {
            self.tensors[id.0].grad += g;
        }
    }

    pub fn grad_norm(&self) -> f64 {
        self.tensors
            .iter()
            .flat_map(|t| t.grad.iter())
            .map(|&g| g.to_f64().unwrap().powi(2))
            .sum::<f64>()
            .sqrt()
    }

    pub fn num_values(&self) -> usize {
        self.tensors.iter().map(|t| t.value.len()).sum()
    }

    /// Same parameters converted to another precision.
    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        let mut out = ParamStore::new();
        for (name, t) in self.names.iter().zip(&self.tensors) {
            out.add(name.clone(), t.value.mapv(|v| U::from_f64(v.to_f64().unwrap()).unwrap()));
        }
        out
    }

    /// Copies values (not gradients) from a store with identical layout.
    pub fn copy_values_from(&mut self, other: &ParamStore<T>) {
        assert_eq!(self.names, other.names, "parameter layout differs");
        for (dst, src) in self.tensors.iter_mut().zip(&other.tensors) {
            dst.value.assign(&src.value);
        }
    }
}

/// Glorot-uniform `rows x cols` matrix: `U(-a, a)`, `a = sqrt(6 / (fan_in + fan_out))`.
pub fn xavier<T: Real, R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Array2<T> {
    xavier_fan(rows, cols, rows, cols, rng)
}

/// Xavier-uniform matrix of shape `rows x cols` with explicit fan sizes, for
/// layers whose effective fan-in differs from the matrix height.
pub fn xavier_fan<T: Real, R: Rng>(rows: usize, cols: usize, fan_in: usize, fan_out: usize, rng: &mut R) -> Array2<T> {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Array2::from_shape_simple_fn((rows, cols), || T::lit(rng.random_range(-a..a)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn store_bookkeeping() {
        let mut s = ParamStore::<f64>::new();
        let a = s.add("a", Array2::zeros((2, 3)));
        let b = s.add("b", Array2::ones((1, 3)));
        assert_eq!(s.len(), 2);
        assert_eq!(s.id("b"), Some(b));
        assert_eq!(s.name(a), "a");
        assert_eq!(s.tensor(a).shape(), [2, 3]);
        assert_eq!(s.num_values(), 9);
        let c: ParamStore<f32> = s.cast();
        assert_eq!(c.value(b)[[0, 2]], 1.0f32);
    }

    #[test]
    fn xavier_bounds() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let w: Array2<f64> = xavier(30, 50, &mut rng);
        let a = (6.0f64 / 80.0).sqrt();
        assert!(w.iter().all(|v| v.abs() < a));
        assert!(w.iter().any(|v| v.abs() > a / 2.0));
    }
}
