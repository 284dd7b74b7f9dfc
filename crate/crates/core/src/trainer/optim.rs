use std::collections::BTreeMap;

use crate::error::{invalid, shape, Result};
use crate::model::Model;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled decay: each step first scales parameters by `1 − lr·λ`.
    pub weight_decay: f64,
    /// Rescale gradients whose global L2 norm exceeds this value.
    pub clip_norm: Option<f64>,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self { lr: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.1, clip_norm: None }
    }
}

impl AdamWConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0) || !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(invalid("optimizer needs lr >= 0 and betas in [0, 1)"));
        }
        if !(self.eps > 0.0) || !(self.weight_decay >= 0.0) {
            return Err(invalid("optimizer needs eps > 0 and weight decay >= 0"));
        }
        if self.clip_norm.is_some_and(|c| !(c > 0.0)) {
            return Err(invalid("clip norm must be positive"));
        }
        Ok(())
    }
}

/// One AdamW update of a single tensor; `step` counts from 1.
pub fn adamw_update(p: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64], step: u64, cfg: &AdamWConfig) {
    let bc1 = 1.0 - cfg.beta1.powi(step as i32);
    let bc2 = 1.0 - cfg.beta2.powi(step as i32);
    for i in 0..p.len() {
        p[i] *= 1.0 - cfg.lr * cfg.weight_decay;
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        p[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
}

pub fn global_norm(grads: &BTreeMap<String, Tensor>) -> f64 {
    grads.values().map(|g| g.sum_sq()).sum::<f64>().sqrt()
}

/// Moment estimates of every tensor the optimiser has touched.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub step: u64,
    pub config: AdamWConfig,
    m: BTreeMap<String, Vec<f64>>,
    v: BTreeMap<String, Vec<f64>>,
}

impl OptimizerState {
    pub fn new(config: AdamWConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { step: 0, config, m: BTreeMap::new(), v: BTreeMap::new() })
    }

    pub fn first_moment(&self, name: &str) -> Option<&[f64]> {
        self.m.get(name).map(Vec::as_slice)
    }

    pub fn second_moment(&self, name: &str) -> Option<&[f64]> {
        self.v.get(name).map(Vec::as_slice)
    }

    /// Updates every parameter named in `grads`; parameters without a
    /// gradient are left untouched (no decay either).
    pub fn step(&mut self, model: &mut Model, grads: &BTreeMap<String, Tensor>) -> Result<()> {
        for (name, g) in grads {
            let p = model.param(name).ok_or_else(|| invalid(format!("gradient for unknown parameter {name}")))?;
            if p.shape() != g.shape() {
                return Err(shape(format!("gradient of {name} has shape {:?}", g.shape())));
            }
        }
        self.step += 1;
        let clip = match self.config.clip_norm {
            Some(c) => {
                let n = global_norm(grads);
                if n > c {
                    c / n
                } else {
                    1.0
                }
            }
            None => 1.0,
        };
        for (name, g) in grads {
            let p = model.param_mut(name).expect("checked above");
            let m = self.m.entry(name.clone()).or_insert_with(|| vec![0.0; g.len()]);
            let v = self.v.entry(name.clone()).or_insert_with(|| vec![0.0; g.len()]);
            if clip == 1.0 {
                adamw_update(p.data_mut(), g.data(), m, v, self.step, &self.config);
            } else {
                let scaled: Vec<f64> = g.data().iter().map(|x| x * clip).collect();
                adamw_update(p.data_mut(), &scaled, m, v, self.step, &self.config);
            }
        }
        Ok(())
    }
}
