//! Adam with decoupled weight decay. Decay applies only to `ParamKind::Weight`.

use ndarray::Zip;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::DeNet;
use crate::nn::Parameterized;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-3,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::Config("learning_rate must be finite and >= 0".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("Adam betas must lie in [0, 1)".into()));
        }
        if self.eps.is_nan() || self.eps <= 0.0 || self.weight_decay.is_nan() || self.weight_decay < 0.0 {
            return Err(Error::Config("eps must be > 0 and weight_decay >= 0".into()));
        }
        Ok(())
    }
}

/// First and second moment estimates, shaped like the model.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub first: DeNet,
    pub second: DeNet,
}

impl AdamState {
    pub fn new(model: &DeNet) -> Self {
        Self {
            step: 0,
            first: model.zeros_like(),
            second: model.zeros_like(),
        }
    }

    /// One update. Parameters and moments are rounded to `f32` afterwards so the
    /// in-memory state is exactly what a checkpoint stores.
    pub fn update(&mut self, cfg: &AdamConfig, model: &mut DeNet, grads: &DeNet) {
        self.step += 1;
        let bc1 = 1.0 - cfg.beta1.powi(self.step as i32);
        let bc2 = 1.0 - cfg.beta2.powi(self.step as i32);
        let params = model.param_list_mut();
        let grads = grads.param_list();
        let firsts = self.first.param_list_mut();
        let seconds = self.second.param_list_mut();
        for (((p, g), m), v) in params.into_iter().zip(grads).zip(firsts).zip(seconds) {
            debug_assert_eq!(p.name, g.name);
            let decay = if p.kind.decays() {
                cfg.learning_rate * cfg.weight_decay
            } else {
                0.0
            };
            Zip::from(p.data)
                .and(&g.data)
                .and(m.data)
                .and(v.data)
                .for_each(|p, &g, m, v| {
                    *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
                    *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
                    let m_hat = *m / bc1;
                    let v_hat = *v / bc2;
                    let mut next = *p - decay * *p;
                    next -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.eps);
                    *p = next as f32 as f64;
                    *m = *m as f32 as f64;
                    *v = *v as f32 as f64;
                });
        }
    }
}
