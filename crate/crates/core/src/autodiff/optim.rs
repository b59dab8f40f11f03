use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{ParamStore, Real};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.95,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Optimizer hyperparameters and running state.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState<T> {
    pub kind: OptimizerKind,
    pub step_size: f64,
    /// Global gradient norm bound; `None` disables clipping.
    pub clip_norm: Option<f64>,
    pub adam: AdamConfig,
    pub step: u64,
    /// First and second moments, one per parameter (Adam only).
    pub m: Vec<Array2<T>>,
    pub v: Vec<Array2<T>>,
}

impl<T: Real> OptimizerState<T> {
    pub fn sgd(step_size: f64, clip_norm: Option<f64>) -> Self {
        Self {
            kind: OptimizerKind::Sgd,
            step_size,
            clip_norm,
            adam: AdamConfig::default(),
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn adam(step_size: f64, clip_norm: Option<f64>, adam: AdamConfig) -> Self {
        Self {
            kind: OptimizerKind::Adam,
            step_size,
            clip_norm,
            adam,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepReport {
    pub grad_norm: f64,
    /// Norm of the gradient actually applied.
    pub applied_norm: f64,
    pub step_size: f64,
}

/// Rescales all gradients so their joint L2 norm is at most `max_norm`.
/// Returns `(norm before, norm after)`.
pub fn clip_global_norm<T: Real>(params: &mut ParamStore<T>, max_norm: f64) -> (f64, f64) {
    let norm = params.grad_norm();
    if norm > max_norm && norm > 0.0 {
        let mut scale = max_norm / norm;
        loop {
            let s = T::lit(scale);
            for t in params.tensors_mut() {
                t.grad.mapv_inplace(|g| g * s);
            }
            // Rounding in low precision can leave the norm a hair above the bound.
            let after = params.grad_norm();
            if after <= max_norm {
                return (norm, after);
            }
            scale = (max_norm / after) * (1.0 - 4.0 * T::epsilon().to_f64().unwrap());
        }
    } else {
        (norm, norm)
    }
}

fn prepare<T: Real>(params: &mut ParamStore<T>, state: &OptimizerState<T>) -> Result<StepReport> {
    let grad_norm = params.grad_norm();
    if !grad_norm.is_finite() {
        return Err(Error::Numeric { op: "optimizer_step" });
    }
    let applied_norm = match state.clip_norm {
        Some(max) => clip_global_norm(params, max).1,
        None => grad_norm,
    };
    Ok(StepReport {
        grad_norm,
        applied_norm,
        step_size: state.step_size,
    })
}

/// `p <- p - step_size * clip(g)`. Refuses non-finite gradients.
pub fn sgd_step<T: Real>(params: &mut ParamStore<T>, state: &mut OptimizerState<T>) -> Result<StepReport> {
    let report = prepare(params, state)?;
    let lr = T::lit(state.step_size);
    for t in params.tensors_mut() {
        t.value.scaled_add(-lr, &t.grad);
    }
    state.step += 1;
    Ok(report)
}

/// Bias-corrected Adam on clipped gradients.
pub fn adam_step<T: Real>(params: &mut ParamStore<T>, state: &mut OptimizerState<T>) -> Result<StepReport> {
    let report = prepare(params, state)?;
    if state.m.len() != params.len() {
        state.m = params.ids().map(|id| Array2::zeros(params.value(id).raw_dim())).collect();
        state.v = state.m.clone();
    }
    state.step += 1;
    let t = state.step as i32;
    let AdamConfig { beta1, beta2, eps } = state.adam;
    let (b1, b2) = (T::lit(beta1), T::lit(beta2));
    let c1 = T::lit(1.0 - beta1.powi(t));
    let c2 = T::lit(1.0 - beta2.powi(t));
    let lr = T::lit(state.step_size);
    let eps = T::lit(eps);
    for ((tensor, m), v) in params.tensors_mut().iter_mut().zip(&mut state.m).zip(&mut state.v) {
        ndarray::Zip::from(&mut tensor.value)
            .and(&tensor.grad)
            .and(m)
            .and(v)
            .for_each(|p, &g, m, v| {
                *m = b1 * *m + (T::one() - b1) * g;
                *v = b2 * *v + (T::one() - b2) * g * g;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *p -= lr * m_hat / (v_hat.sqrt() + eps);
            });
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn sgd_on_quadratic() {
        let mut s = ParamStore::<f64>::new();
        let p = s.add("p", array![[1.0]]);
        s.tensors_mut()[0].grad = array![[2.0]];
        let mut st = OptimizerState::sgd(0.025, Some(5.0));
        sgd_step(&mut s, &mut st).unwrap();
        assert_eq!(s.value(p)[[0, 0]], 1.0 - 0.025 * 2.0);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn clip_halves_norm_ten() {
        let mut s = ParamStore::<f64>::new();
        s.add("a", array![[0.0, 0.0]]);
        s.tensors_mut()[0].grad = array![[6.0, 8.0]];
        let (before, after) = clip_global_norm(&mut s, 5.0);
        assert_eq!(before, 10.0);
        assert!((after - 5.0).abs() < 1e-12);
        assert_eq!(s.tensors_mut()[0].grad, array![[3.0, 4.0]]);
    }

    #[test]
    fn non_finite_gradient_refused() {
        let mut s = ParamStore::<f64>::new();
        let p = s.add("a", array![[1.0]]);
        s.tensors_mut()[0].grad = array![[f64::NAN]];
        let mut st = OptimizerState::sgd(0.1, None);
        assert!(matches!(sgd_step(&mut s, &mut st), Err(Error::Numeric { .. })));
        assert_eq!(s.value(p)[[0, 0]], 1.0);
        assert_eq!(st.step, 0);
    }

    #[test]
    fn adam_first_step_by_hand() {
        let g = 0.3f64;
        let mut s = ParamStore::<f64>::new();
        let p = s.add("a", array![[2.0]]);
        s.tensors_mut()[0].grad = array![[g]];
        let mut st = OptimizerState::adam(1e-3, Some(5.0), AdamConfig::default());
        adam_step(&mut s, &mut st).unwrap();
        // t = 1: m = 0.05 g, v = 0.001 g^2; bias corrections give m_hat = g, v_hat = g^2.
        let m_hat = (0.05 * g) / (1.0 - 0.95);
        let v_hat = (0.001 * g * g) / (1.0 - 0.999);
        let expect = 2.0 - 1e-3 * m_hat / (v_hat.sqrt() + 1e-8);
        assert!((s.value(p)[[0, 0]] - expect).abs() < 1e-15);
        assert!((s.value(p)[[0, 0]] - (2.0 - 1e-3 * g / (g + 1e-8))).abs() < 1e-12);
    }
}
