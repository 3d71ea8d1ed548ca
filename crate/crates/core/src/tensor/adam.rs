//! Adam with bias correction.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Optimizer state for one flat list of parameter tensors.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub step: u64,
    pub hp: AdamHyperParams,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct AdamHyperParams {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
}

impl AdamHyperParams {
    pub fn with_lr(lr: f32) -> Self {
        AdamHyperParams {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamState {
    pub fn new(params: &[Tensor], hp: AdamHyperParams) -> Self {
        AdamState {
            m: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            v: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            step: 0,
            hp,
        }
    }
}

/// One Adam step over aligned parameter/gradient lists.
pub fn adam_update(params: &mut [Tensor], grads: &[Tensor], state: &mut AdamState) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::shape("adam_update: list length mismatch"));
    }
    for (i, p) in params.iter().enumerate() {
        if !p.same_shape(&grads[i]) || !p.same_shape(&state.m[i]) {
            return Err(Error::shape(format!(
                "adam_update: shape mismatch at parameter {i}"
            )));
        }
    }
    state.step += 1;
    let t = state.step as f64;
    let b1 = state.hp.beta1;
    let b2 = state.hp.beta2;
    let bc1 = (1.0 - (b1 as f64).powf(t)) as f32;
    let bc2 = (1.0 - (b2 as f64).powf(t)) as f32;
    for ((p, g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        let pd = p.data_mut();
        for i in 0..pd.len() {
            let gi = g.data()[i];
            let mi = b1 * m.data()[i] + (1.0 - b1) * gi;
            let vi = b2 * v.data()[i] + (1.0 - b2) * gi * gi;
            m.data_mut()[i] = mi;
            v.data_mut()[i] = vi;
            let mhat = mi / bc1;
            let vhat = vi / bc2;
            pd[i] -= state.hp.lr * mhat / (vhat.sqrt() + state.hp.eps);
        }
    }
    Ok(())
}
