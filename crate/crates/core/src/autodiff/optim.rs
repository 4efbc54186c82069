use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{Grads, ParamStore};
use crate::math;
use crate::matrix::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub momentum: f64,
    pub weight_decay: f64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self {
            momentum: 0.9,
            weight_decay: 1e-4,
        }
    }
}

/// Momentum buffers (one per parameter) plus the step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimState {
    pub config: SgdConfig,
    pub momentum: Vec<Matrix>,
    pub step: u64,
}

impl OptimState {
    pub fn new(store: &ParamStore, config: SgdConfig) -> Self {
        Self {
            config,
            momentum: store.iter().map(|(_, _, v)| Matrix::zeros(v.rows(), v.cols())).collect(),
            step: 0,
        }
    }
}

/// `v <- momentum * v + g + weight_decay * w`, then `w <- w - lr * v`.
pub fn sgd_step(store: &mut ParamStore, grads: &Grads, state: &mut OptimState, lr: f64) {
    let SgdConfig { momentum, weight_decay } = state.config;
    for ((w, g), v) in store
        .values_mut()
        .iter_mut()
        .zip(grads.as_slice())
        .zip(state.momentum.iter_mut())
    {
        for ((wi, gi), vi) in w.as_mut_slice().iter_mut().zip(g.as_slice()).zip(v.as_mut_slice()) {
            *vi = momentum * *vi + gi + weight_decay * *wi;
            *wi -= lr * *vi;
        }
    }
    state.step += 1;
}

/// Linear warm-up from 0 to `base_lr` over `warmup_epochs`, then a half
/// cosine decaying to 0 at `total_epochs`.
pub fn cosine_lr(epoch_fraction: f64, base_lr: f64, warmup_epochs: f64, total_epochs: f64) -> f64 {
    if warmup_epochs > 0.0 && epoch_fraction < warmup_epochs {
        return base_lr * epoch_fraction / warmup_epochs;
    }
    let span = total_epochs - warmup_epochs;
    if span <= 0.0 {
        return base_lr;
    }
    let progress = ((epoch_fraction - warmup_epochs) / span).clamp(0.0, 1.0);
    base_lr * 0.5 * (1.0 + math::cos(math::PI * progress))
}
