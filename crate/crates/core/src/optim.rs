//! Adam and global gradient-norm clipping.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-7,
        }
    }
}

/// First and second moment estimates plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    pub fn timestep(&self) -> u64 {
        self.t
    }

    pub fn first_moment(&self) -> &[f64] {
        &self.m
    }

    pub fn second_moment(&self) -> &[f64] {
        &self.v
    }
}

/// One bias-corrected Adam update of `params[range]`. Entries outside `range`
/// (frozen parameters) are left untouched.
pub fn adam_step(
    params: &mut [f64],
    grads: &[f64],
    state: &mut AdamState,
    cfg: &AdamConfig,
    range: Range<usize>,
) -> Result<()> {
    if params.len() != grads.len() || state.m.len() != params.len() || range.end > params.len() {
        return Err(Error::Shape(format!(
            "adam: {} params, {} grads, {} state entries, range {:?}",
            params.len(),
            grads.len(),
            state.m.len(),
            range
        )));
    }
    if let Some((i, g)) = grads[range.clone()].iter().enumerate().find(|(_, g)| !g.is_finite()) {
        return Err(Error::NonFinite(format!(
            "gradient entry {} is {g} at step {}",
            range.start + i,
            state.t + 1
        )));
    }
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for i in range {
        let g = grads[i];
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        params[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
    Ok(())
}

pub fn global_norm(grads: &[f64]) -> f64 {
    grads.iter().map(|g| g * g).sum::<f64>().sqrt()
}

/// Rescales `grads` so its Euclidean norm does not exceed `threshold`.
/// Returns the norms before and after.
pub fn clip_global_norm(grads: &mut [f64], threshold: f64) -> (f64, f64) {
    let before = global_norm(grads);
    if before <= threshold {
        return (before, before);
    }
    let mut scale = threshold / before;
    let mut scaled: Vec<f64> = grads.iter().map(|g| g * scale).collect();
    let mut after = global_norm(&scaled);
    // Rounding can leave the rescaled norm an ulp or two above the threshold.
    while after > threshold {
        scale *= 1.0 - f64::EPSILON;
        scaled = grads.iter().map(|g| g * scale).collect();
        after = global_norm(&scaled);
    }
    grads.copy_from_slice(&scaled);
    (before, after)
}
