#![allow(dead_code)]

pub mod gradcases;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use reverbkit::autodiff::{Graph, ParamStore, Var};
use reverbkit::Result;

pub const STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;
/// Denominator floor so that near-zero gradients are compared absolutely.
pub const FLOOR: f64 = 1e-3;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-scale..scale))
}

/// Values bounded away from zero, for ops with a kink at 0.
pub fn away_from_zero(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || {
        let m = rng.random_range(0.05..1.0);
        if rng.random_bool(0.5) { m } else { -m }
    })
}

fn eval(store: &ParamStore<f64>, build: &impl Fn(&mut Graph<'_, f64>) -> Result<Var>) -> f64 {
    let mut g = Graph::new(store);
    let loss = build(&mut g).expect("forward");
    g.scalar(loss)
}

/// Largest relative difference between reverse-mode gradients and central
/// differences over every parameter entry.
pub fn max_rel_error(store: &ParamStore<f64>, build: impl Fn(&mut Graph<'_, f64>) -> Result<Var>) -> f64 {
    let grads = {
        let mut g = Graph::new(store);
        let loss = build(&mut g).expect("forward");
        g.backward(loss).expect("backward")
    };
    let mut worst = 0.0f64;
    for id in store.ids().collect::<Vec<_>>() {
        let shape = store.value(id).raw_dim();
        let analytic = grads.get(id).cloned().unwrap_or_else(|| Array2::zeros(shape));
        for k in 0..analytic.len() {
            let mut plus = store.clone();
            plus.value_mut(id).as_slice_mut().unwrap()[k] += STEP;
            let mut minus = store.clone();
            minus.value_mut(id).as_slice_mut().unwrap()[k] -= STEP;
            let numeric = (eval(&plus, &build) - eval(&minus, &build)) / (2.0 * STEP);
            let a = analytic.as_slice().unwrap()[k];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(FLOOR);
            worst = worst.max(rel);
        }
    }
    worst
}
