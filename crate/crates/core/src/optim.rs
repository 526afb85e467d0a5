//! Bias-corrected Adam over a list of parameter arrays.

use alloc::vec;
use alloc::vec::Vec;

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First/second moments per array plus the shared step counter.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AdamState {
    pub step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl AdamState {
    /// Zero moments shaped like `arrays`.
    pub fn for_shapes<'a>(arrays: impl IntoIterator<Item = &'a [f64]>) -> Self {
        let (first, second) = arrays.into_iter().map(|a| (vec![0.0; a.len()], vec![0.0; a.len()])).unzip();
        AdamState { step: 0, first, second }
    }
}

/// One Adam update applied array by array in order. Arrays with
/// `frozen[i] == true` keep their values and moments.
pub fn adam_step(
    weights: &mut [&mut [f64]],
    grads: &[Vec<f64>],
    state: &mut AdamState,
    cfg: &AdamConfig,
    frozen: Option<&[bool]>,
) -> Result<()> {
    if weights.len() != grads.len() || weights.len() != state.first.len() {
        return Err(Error::shape(
            "adam_step",
            alloc::format!("{} weight arrays", weights.len()),
            alloc::format!("{} gradient arrays / {} moment arrays", grads.len(), state.first.len()),
        ));
    }
    for (i, (w, g)) in weights.iter().zip(grads).enumerate() {
        if w.len() != g.len() || w.len() != state.first[i].len() {
            return Err(Error::shape(
                "adam_step",
                alloc::format!("array {i}: {} weights", w.len()),
                alloc::format!("{} gradients / {} moments", g.len(), state.first[i].len()),
            ));
        }
    }
    state.step += 1;
    let t = state.step as f64;
    let bc1 = 1.0 - libm::pow(cfg.beta1, t);
    let bc2 = 1.0 - libm::pow(cfg.beta2, t);
    for (i, (w, g)) in weights.iter_mut().zip(grads).enumerate() {
        if frozen.is_some_and(|f| f.get(i).copied().unwrap_or(false)) {
            continue;
        }
        let m = &mut state.first[i];
        let v = &mut state.second[i];
        for k in 0..w.len() {
            let gk = g[k];
            m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * gk;
            v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * gk * gk;
            let m_hat = m[k] / bc1;
            let v_hat = v[k] / bc2;
            w[k] -= cfg.learning_rate * m_hat / (libm::sqrt(v_hat) + cfg.epsilon);
        }
    }
    Ok(())
}
