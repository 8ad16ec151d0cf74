//! AdamW with decoupled weight decay.

use std::collections::BTreeMap;

use super::graph::GradStore;
use super::params::{ParamGroup, ParamId, ParamStore};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-4,
        }
    }
}

/// First and second moment estimates for one parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl MomentState {
    pub fn zeros(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
        }
    }
}

/// One AdamW update of `param` in place.
pub fn adamw_step(
    param: &mut Tensor,
    grad: &Tensor,
    state: &mut MomentState,
    lr: f64,
    cfg: &AdamWConfig,
) -> Result<()> {
    if param.shape() != grad.shape() {
        return Err(Error::dim("adamw", param.shape(), grad.shape()));
    }
    if state.m.len() != param.len() || state.v.len() != param.len() {
        return Err(Error::dim("adamw state", param.shape(), &[state.m.len()]));
    }
    if !(lr > 0.0) {
        return Err(Error::Contract(format!("learning rate must be > 0, got {lr}")));
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for (((p, g), m), v) in param
        .data_mut()
        .iter_mut()
        .zip(grad.data())
        .zip(state.m.iter_mut())
        .zip(state.v.iter_mut())
    {
        *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
        *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
        let mhat = *m / bc1;
        let vhat = *v / bc2;
        *p -= lr * cfg.weight_decay * *p;
        *p -= lr * mhat / (vhat.sqrt() + cfg.eps);
    }
    Ok(())
}

/// AdamW over a [`ParamStore`], with per-group learning rates.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub config: AdamWConfig,
    states: BTreeMap<ParamId, MomentState>,
}

impl AdamW {
    pub fn new(config: AdamWConfig) -> Self {
        Self {
            config,
            states: BTreeMap::new(),
        }
    }

    /// Updates every trainable parameter that has a gradient. Frozen
    /// parameters are rejected rather than silently skipped.
    pub fn step(
        &mut self,
        store: &mut ParamStore,
        grads: &GradStore,
        lr_for: impl Fn(ParamGroup) -> f64,
    ) -> Result<()> {
        for (id, g) in grads.params() {
            let p = store.get_mut(id);
            if !p.trainable {
                return Err(Error::Contract(format!(
                    "gradient supplied for frozen parameter {}",
                    p.name
                )));
            }
            let lr = lr_for(p.group);
            let state = self
                .states
                .entry(id)
                .or_insert_with(|| MomentState::zeros(g.len()));
            adamw_step(&mut p.value, g, state, lr, &self.config)?;
        }
        Ok(())
    }

    pub fn state(&self, id: ParamId) -> Option<&MomentState> {
        self.states.get(&id)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_grad_without_decay_leaves_params() {
        let mut p = Tensor::vector(vec![1.0, -2.0, 3.0]).unwrap();
        let before = p.clone();
        let g = Tensor::zeros(&[3]);
        let mut st = MomentState::zeros(3);
        let cfg = AdamWConfig {
            weight_decay: 0.0,
            ..Default::default()
        };
        for _ in 0..5 {
            adamw_step(&mut p, &g, &mut st, 1e-2, &cfg).unwrap();
        }
        assert!(p.bit_eq(&before));
    }

    #[test]
    fn first_step_hand_trace_reduces_quadratic() {
        // f(w) = (w - 3)^2 at w = 0: g = -6. First bias-corrected step moves
        // w by lr * g / (|g| + eps) = +lr (up to eps), before decay.
        let mut w = Tensor::scalar(0.0);
        let g = Tensor::scalar(-6.0);
        let mut st = MomentState::zeros(1);
        let cfg = AdamWConfig {
            weight_decay: 0.0,
            ..Default::default()
        };
        adamw_step(&mut w, &g, &mut st, 0.1, &cfg).unwrap();
        let expected = 0.1 * 6.0 / (6.0 + 1e-8);
        assert!((w.data()[0] - expected).abs() < 1e-15);
        let f = |x: f64| (x - 3.0) * (x - 3.0);
        assert!(f(w.data()[0]) < f(0.0));
    }

    #[test]
    fn rejects_shape_mismatch_and_bad_lr() {
        let mut p = Tensor::zeros(&[2]);
        let mut st = MomentState::zeros(2);
        let cfg = AdamWConfig::default();
        assert!(adamw_step(&mut p, &Tensor::zeros(&[3]), &mut st, 0.1, &cfg).is_err());
        assert!(adamw_step(&mut p, &Tensor::zeros(&[2]), &mut st, 0.0, &cfg).is_err());
    }
}
