//! Adam with bias correction.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::graph::{Gradients, ModelGraph};

#[derive(Clone, Copy, Debug, PartialEq)]
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
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Moments {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    pub moments: BTreeMap<String, Moments>,
}

/// One Adam update of a single tensor at (already incremented) step `t`.
pub fn adam_update(
    params: &mut [f64],
    grads: &[f64],
    moments: &mut Moments,
    t: u64,
    cfg: &AdamConfig,
) -> Result<()> {
    if grads.len() != params.len() {
        return Err(Error::shape(
            "adam",
            format!("{} gradients for {} parameters", grads.len(), params.len()),
        ));
    }
    if moments.m.is_empty() {
        moments.m = vec![0.0; params.len()];
        moments.v = vec![0.0; params.len()];
    }
    if moments.m.len() != params.len() {
        return Err(Error::shape(
            "adam",
            format!("moment length {} for {} parameters", moments.m.len(), params.len()),
        ));
    }
    let bc1 = 1.0 - cfg.beta1.powi(t as i32);
    let bc2 = 1.0 - cfg.beta2.powi(t as i32);
    for (((p, &g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(moments.m.iter_mut())
        .zip(moments.v.iter_mut())
    {
        *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
        *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *p -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
    Ok(())
}

impl AdamState {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            moments: BTreeMap::new(),
        }
    }

    /// Applies one step to every trainable tensor that has a gradient.
    pub fn step(&mut self, model: &mut ModelGraph, grads: &Gradients) -> Result<()> {
        self.step += 1;
        let t = self.step;
        let cfg = self.config;
        let mut result = Ok(());
        model.visit_params_mut(|name, trainable, values| {
            if !trainable || result.is_err() {
                return;
            }
            if let Some(g) = grads.get(name) {
                let moments = self.moments.entry(name.to_string()).or_default();
                result = adam_update(values, g, moments, t, &cfg);
            }
        });
        result
    }
}
