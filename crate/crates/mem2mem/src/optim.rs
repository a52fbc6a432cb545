//! Adam with global gradient-norm clipping.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPS: f64 = 1e-8;

/// First/second moment accumulators plus the step counter.
#[derive(Clone, Debug, Default)]
pub struct AdamState {
    pub step: u64,
    pub m: BTreeMap<String, Vec<f64>>,
    pub v: BTreeMap<String, Vec<f64>>,
}

impl AdamState {
    pub fn new() -> Self {
        AdamState::default()
    }
}

/// Global L2 norm over all gradient tensors.
pub fn global_norm(grads: &BTreeMap<String, Tensor>) -> f64 {
    grads
        .values()
        .map(|g| g.data().iter().map(|v| v * v).sum::<f64>())
        .sum::<f64>()
        .sqrt()
}

/// One optimizer step. Rescales the whole gradient set so its global norm is
/// at most `clip_norm` (when `clip_norm > 0`), then applies bias-corrected
/// Adam in place. Rejects non-finite gradients, naming the parameter.
pub fn adam_step(
    params: &mut BTreeMap<String, Tensor>,
    grads: &BTreeMap<String, Tensor>,
    state: &mut AdamState,
    lr: f64,
    clip_norm: f64,
) -> Result<()> {
    for (name, g) in grads {
        if g.data().iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteGradient { param: name.clone() });
        }
    }
    let norm = global_norm(grads);
    let scale = if clip_norm > 0.0 && norm > clip_norm { clip_norm / norm } else { 1.0 };

    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - BETA1.powi(t);
    let bc2 = 1.0 - BETA2.powi(t);

    for (name, param) in params.iter_mut() {
        let Some(grad) = grads.get(name) else { continue };
        let m = state.m.entry(name.clone()).or_insert_with(|| vec![0.0; param.numel()]);
        let v = state.v.entry(name.clone()).or_insert_with(|| vec![0.0; param.numel()]);
        let pd = param.data_mut();
        for i in 0..pd.len() {
            let g = grad.data()[i] * scale;
            m[i] = BETA1 * m[i] + (1.0 - BETA1) * g;
            v[i] = BETA2 * v[i] + (1.0 - BETA2) * g * g;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            pd[i] -= lr * m_hat / (v_hat.sqrt() + EPS);
        }
    }
    Ok(())
}
