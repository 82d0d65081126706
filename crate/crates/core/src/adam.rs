//! Adam optimizer with bias correction.

use serde::{Deserialize, Serialize};

use crate::net::{Mlp, MlpGrads};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamParams {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

/// One flat Adam update. `step` is the 1-based step count after this
/// update; the caller owns the moment buffers.
pub fn adam_update(
    params: &mut [f64],
    grads: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    step: u64,
    lr: f64,
    p: &AdamParams,
) {
    debug_assert!(step >= 1);
    let bc1 = 1.0 - p.beta1.powi(step as i32);
    let bc2 = 1.0 - p.beta2.powi(step as i32);
    for i in 0..params.len() {
        let g = grads[i];
        m[i] = p.beta1 * m[i] + (1.0 - p.beta1) * g;
        v[i] = p.beta2 * v[i] + (1.0 - p.beta2) * g * g;
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + p.epsilon);
    }
}

/// Adam state for one network. Never shared across networks.
#[derive(Debug, Clone)]
pub struct Adam {
    params: AdamParams,
    m_w: Vec<Vec<f64>>,
    v_w: Vec<Vec<f64>>,
    m_b: Vec<Vec<f64>>,
    v_b: Vec<Vec<f64>>,
    step: u64,
}

impl Adam {
    pub fn new(mlp: &Mlp) -> Self {
        Self::with_params(mlp, AdamParams::default())
    }

    pub fn with_params(mlp: &Mlp, params: AdamParams) -> Self {
        let w: Vec<Vec<f64>> = mlp.layers.iter().map(|l| vec![0.0; l.w.len()]).collect();
        let b: Vec<Vec<f64>> = mlp.layers.iter().map(|l| vec![0.0; l.b.len()]).collect();
        Self {
            params,
            m_w: w.clone(),
            v_w: w,
            m_b: b.clone(),
            v_b: b,
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, mlp: &mut Mlp, grads: &MlpGrads, lr: f64) {
        self.step += 1;
        for (k, layer) in mlp.layers.iter_mut().enumerate() {
            adam_update(&mut layer.w, &grads.w[k], &mut self.m_w[k], &mut self.v_w[k], self.step, lr, &self.params);
            adam_update(&mut layer.b, &grads.b[k], &mut self.m_b[k], &mut self.v_b[k], self.step, lr, &self.params);
        }
    }
}
