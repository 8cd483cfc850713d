use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::ParamStore;

/// Adam with bias-corrected moments, one pair of moment buffers per
/// parameter path.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m: BTreeMap<String, Vec<f64>>,
    v: BTreeMap<String, Vec<f64>>,
}

impl Default for Adam {
    fn default() -> Self {
        Self::new(0.9, 0.999, 1e-8)
    }
}

impl Adam {
    pub fn new(beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            beta1,
            beta2,
            eps,
            step: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    pub fn first_moment(&self, path: &str) -> Option<&[f64]> {
        self.m.get(path).map(Vec::as_slice)
    }

    pub fn second_moment(&self, path: &str) -> Option<&[f64]> {
        self.v.get(path).map(Vec::as_slice)
    }

    /// Applies one update from explicit gradients. Parameters missing from
    /// `grads` are treated as having zero gradient. All gradients are
    /// checked before any parameter changes.
    pub fn apply(&mut self, params: &mut ParamStore, grads: &BTreeMap<String, Vec<f64>>, lr: f64) -> Result<()> {
        for (path, g) in grads {
            let p = params.get(path)?;
            if g.len() != p.numel() {
                return Err(Error::shape(
                    "adam_step",
                    format!("gradient for {path} has {} values, parameter has {}", g.len(), p.numel()),
                ));
            }
            if g.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite(format!("gradient of {path}")));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let paths: Vec<String> = params.paths().cloned().collect();
        for path in paths {
            let p = params.get(&path)?;
            let n = p.numel();
            let m = self.m.entry(path.clone()).or_insert_with(|| vec![0.0; n]);
            let v = self.v.entry(path.clone()).or_insert_with(|| vec![0.0; n]);
            let mut data = p.to_vec();
            let zeros;
            let g = match grads.get(&path) {
                Some(g) => g.as_slice(),
                None => {
                    zeros = vec![0.0; n];
                    &zeros
                }
            };
            for i in 0..n {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                data[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + self.eps);
            }
            params.set_data(&path, data)?;
        }
        Ok(())
    }

    /// Applies one update using the gradients accumulated on the parameter
    /// leaves by the last backward pass.
    pub fn step(&mut self, params: &mut ParamStore, lr: f64) -> Result<()> {
        let grads = params
            .iter()
            .filter_map(|(k, t)| t.grad().map(|g| (k.clone(), g)))
            .collect();
        self.apply(params, &grads, lr)
    }
}

/// Step decay: `initial_lr * gamma^floor(epoch / period_epochs)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub initial_lr: f64,
    pub gamma: f64,
    pub period_epochs: usize,
}

impl Schedule {
    pub const STE: Schedule = Schedule {
        initial_lr: 3e-4,
        gamma: 0.1,
        period_epochs: 40,
    };

    pub const ASC: Schedule = Schedule {
        initial_lr: 3e-6,
        gamma: 0.1,
        period_epochs: 10,
    };

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma <= 1.0) || self.period_epochs == 0 || !(self.initial_lr >= 0.0) {
            return Err(Error::Config(format!("invalid learning-rate schedule {self:?}")));
        }
        Ok(())
    }
}

pub fn lr_at(schedule: &Schedule, epoch: usize) -> f64 {
    schedule.initial_lr * schedule.gamma.powi((epoch / schedule.period_epochs) as i32)
}
