use ndarray::Zip;
use serde::{Deserialize, Serialize};

use super::{Gradients, MlpModel, NeuralError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub step_size: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { step_size: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub config: AdamConfig,
    pub m: Gradients,
    pub v: Gradients,
    pub step: u64,
}

impl AdamState {
    pub fn new(model: &MlpModel, config: AdamConfig) -> Self {
        Self { config, m: Gradients::zeros_like(model), v: Gradients::zeros_like(model), step: 0 }
    }
}

/// `θ ← θ - step · m̂ / (√v̂ + eps)` with bias-corrected moments.
pub fn adam_step(state: &mut AdamState, model: &mut MlpModel, grads: &Gradients) -> Result<(), NeuralError> {
    if !grads.matches(model) || !state.m.matches(model) || !state.v.matches(model) {
        return Err(NeuralError::ShapeMismatch);
    }
    state.step += 1;
    let AdamConfig { step_size, beta1, beta2, eps } = state.config;
    let c1 = 1.0 - beta1.powf(state.step as f64);
    let c2 = 1.0 - beta2.powf(state.step as f64);
    let update = |p: &mut f64, m: &mut f64, v: &mut f64, g: &f64| {
        *m = beta1 * *m + (1.0 - beta1) * g;
        *v = beta2 * *v + (1.0 - beta2) * g * g;
        *p -= step_size * (*m / c1) / ((*v / c2).sqrt() + eps);
    };
    for (((layer, m), v), g) in model.layers.iter_mut().zip(&mut state.m.layers).zip(&mut state.v.layers).zip(&grads.layers) {
        Zip::from(&mut layer.weights).and(&mut m.weights).and(&mut v.weights).and(&g.weights).for_each(update);
        Zip::from(&mut layer.bias).and(&mut m.bias).and(&mut v.bias).and(&g.bias).for_each(update);
    }
    Ok(())
}
