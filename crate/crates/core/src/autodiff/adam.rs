//! Adam with bias correction.

use serde::{Deserialize, Serialize};

use super::{Array, Parameter};

/// Adam hyperparameters. The defaults are the ones used throughout the
/// experiments: learning rate 1e-5, beta1 0.5, beta2 0.999, epsilon 1e-9.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamHyper {
    pub alpha: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper { alpha: 1e-5, beta1: 0.5, beta2: 0.999, epsilon: 1e-9 }
    }
}

/// First/second moment estimates plus a step counter, one pair per parameter.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<Array>,
    v: Vec<Array>,
    t: u64,
}

impl AdamState {
    pub fn new(params: &[&Parameter]) -> Self {
        AdamState {
            m: params.iter().map(|p| Array::zeros(p.value.shape().to_vec())).collect(),
            v: params.iter().map(|p| Array::zeros(p.value.shape().to_vec())).collect(),
            t: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }
}

/// One Adam update from the gradients currently held in the parameters'
/// accumulators:
///
/// m ← β₁m + (1−β₁)g, v ← β₂v + (1−β₂)g², θ ← θ − α·m̂ / (√v̂ + ε)
///
/// with m̂, v̂ the bias-corrected moments.
pub fn adam_step(params: &mut [&mut Parameter], state: &mut AdamState, hyper: &AdamHyper) {
    assert_eq!(params.len(), state.m.len(), "Adam state sized for a different parameter list");
    state.t += 1;
    let t = state.t as i32;
    let bc1 = 1.0 - hyper.beta1.powi(t);
    let bc2 = 1.0 - hyper.beta2.powi(t);
    for (i, p) in params.iter_mut().enumerate() {
        assert_eq!(
            p.value.shape(),
            state.m[i].shape(),
            "parameter {i} shape changed after state creation"
        );
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        let g = p.grad.data();
        let theta = p.value.data_mut();
        for k in 0..g.len() {
            m[k] = hyper.beta1 * m[k] + (1.0 - hyper.beta1) * g[k];
            v[k] = hyper.beta2 * v[k] + (1.0 - hyper.beta2) * g[k] * g[k];
            let m_hat = m[k] / bc1;
            let v_hat = v[k] / bc2;
            theta[k] -= hyper.alpha * m_hat / (v_hat.sqrt() + hyper.epsilon);
        }
    }
}
