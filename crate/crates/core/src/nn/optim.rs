use alloc::vec;
use alloc::vec::Vec;

use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::math::{powf, sqrt};

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm ceiling; `None` disables clipping.
    pub clip: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip: Some(5.0),
        }
    }
}

/// First and second moments, one buffer per trainable tensor in parameter
/// order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn for_params(params: &[&mut Tensor]) -> Self {
        Self {
            step: 0,
            m: params.iter().map(|t| vec![0.0; t.numel()]).collect(),
            v: params.iter().map(|t| vec![0.0; t.numel()]).collect(),
        }
    }
}

/// Rescales all gradients so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(params: &mut [&mut Tensor], max_norm: f64) -> f64 {
    let norm = sqrt(
        params
            .iter()
            .filter_map(|t| t.grad.as_ref())
            .flat_map(|g| g.iter())
            .map(|v| v * v)
            .sum::<f64>(),
    );
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        for t in params.iter_mut() {
            if let Some(g) = t.grad.as_mut() {
                for v in g {
                    *v *= s;
                }
            }
        }
    }
    norm
}

/// Clips, then applies one bias-corrected Adam update to every tensor with
/// `requires_grad`. Returns the pre-clip gradient norm.
pub fn adam_step(params: &mut [&mut Tensor], state: &mut AdamState, lr: f64, cfg: &AdamConfig) -> Result<f64> {
    if state.m.is_empty() && state.step == 0 {
        *state = AdamState::for_params(params);
    }
    if state.m.len() != params.len() {
        return Err(Error::LengthMismatch(state.m.len(), params.len()));
    }
    for (i, t) in params.iter().enumerate() {
        if state.m[i].len() != t.numel() || state.v[i].len() != t.numel() {
            return Err(Error::Shape {
                layer: i,
                detail: alloc::format!("optimizer moments do not match {}", t.name),
            });
        }
        if let Some(g) = &t.grad {
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteGradient(t.name.clone()));
            }
        }
    }
    let norm = match cfg.clip {
        Some(c) => clip_global_norm(params, c),
        None => clip_global_norm(params, f64::INFINITY),
    };
    state.step += 1;
    let bc1 = 1.0 - powf(cfg.beta1, state.step as f64);
    let bc2 = 1.0 - powf(cfg.beta2, state.step as f64);
    for (i, t) in params.iter_mut().enumerate() {
        if !t.requires_grad {
            continue;
        }
        let Some(g) = t.grad.as_ref() else { continue };
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        let mut updated = t.data.clone();
        for j in 0..updated.len() {
            m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g[j];
            v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g[j] * g[j];
            let mh = m[j] / bc1;
            let vh = v[j] / bc2;
            updated[j] -= lr * mh / (sqrt(vh) + cfg.eps);
        }
        if updated.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteUpdate(t.name.clone()));
        }
        t.data = updated;
    }
    Ok(norm)
}
