use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Half-cosine decay from `base` at iteration 0 to 0 at `total`.
pub fn cosine_lr(base: f64, iter: u64, total: u64) -> f64 {
    if total == 0 {
        return base;
    }
    let x = (iter.min(total) as f64) / total as f64;
    base * 0.5 * (1.0 + (std::f64::consts::PI * x).cos())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub base_lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Iterations of the cosine schedule.
    pub total_iters: u64,
    /// Global gradient-norm clip, if any.
    pub clip: Option<f64>,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self { base_lr: 5e-4, weight_decay: 0.01, beta1: 0.9, beta2: 0.999, eps: 1e-8, total_iters: 1, clip: None }
    }
}

/// AdamW with decoupled weight decay.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamW {
    pub cfg: AdamWConfig,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamW {
    pub fn new(cfg: AdamWConfig, n_params: usize) -> Self {
        Self { cfg, m: vec![0.0; n_params], v: vec![0.0; n_params], step: 0 }
    }

    pub fn lr(&self) -> f64 {
        cosine_lr(self.cfg.base_lr, self.step, self.cfg.total_iters)
    }

    /// One update at the learning rate of the current step.
    pub fn update(&mut self, params: &mut [f64], grad: &[f64]) -> Result<()> {
        if params.len() != self.m.len() || grad.len() != self.m.len() {
            return Err(Error::DimensionMismatch { expected: self.m.len(), got: grad.len() });
        }
        let c = &self.cfg;
        let lr = self.lr();
        let clip = match c.clip {
            Some(maxn) => {
                let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
                if norm > maxn { maxn / norm } else { 1.0 }
            }
            None => 1.0,
        };
        let t = (self.step + 1) as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        for i in 0..params.len() {
            let g = grad[i] * clip;
            self.m[i] = c.beta1 * self.m[i] + (1.0 - c.beta1) * g;
            self.v[i] = c.beta2 * self.v[i] + (1.0 - c.beta2) * g * g;
            let mh = self.m[i] / bc1;
            let vh = self.v[i] / bc2;
            params[i] -= lr * (mh / (vh.sqrt() + c.eps) + c.weight_decay * params[i]);
        }
        self.step += 1;
        if params.iter().all(|x| x.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite(format!("parameters after optimizer step {}", self.step)))
        }
    }
}
