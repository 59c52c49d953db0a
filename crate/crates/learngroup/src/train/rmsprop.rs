//! RMSprop: per-parameter moving average of squared gradients.
//!
//! `v = decay * v + (1 - decay) * g^2`, then
//! `p -= lr * g / (sqrt(v) + epsilon)`.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RmspropParams {
    pub learning_rate: f64,
    pub decay: f64,
    pub epsilon: f64,
}

impl Default for RmspropParams {
    fn default() -> Self {
        RmspropParams {
            learning_rate: 0.001,
            decay: 0.99,
            epsilon: 1e-8,
        }
    }
}

/// Running squared-gradient averages for one parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct RmspropState {
    v: Vec<f64>,
}

impl RmspropState {
    pub fn zeros(len: usize) -> Self {
        RmspropState { v: vec![0.0; len] }
    }

    pub fn averages(&self) -> &[f64] {
        &self.v
    }
}

pub fn rmsprop_step(
    params: &mut [f64],
    grads: &[f64],
    state: &mut RmspropState,
    cfg: &RmspropParams,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.v.len() {
        return Err(Error::LengthMismatch {
            what: "rmsprop step",
            expected: params.len(),
            got: grads.len().max(state.v.len()),
        });
    }
    for ((p, &g), v) in params.iter_mut().zip(grads).zip(&mut state.v) {
        *v = cfg.decay * *v + (1.0 - cfg.decay) * g * g;
        *p -= cfg.learning_rate * g / (v.sqrt() + cfg.epsilon);
    }
    Ok(())
}
