//! Adam with L2 weight decay and global gradient-norm clipping.

use serde::{Deserialize, Serialize};

use crate::params::ParamStore;
use crate::tensor::Tensor;

fn default_lr() -> f64 {
    0.01
}
fn default_wd() -> f64 {
    5e-4
}
fn default_betas() -> (f64, f64) {
    (0.9, 0.999)
}
fn default_eps() -> f64 {
    1e-8
}
fn default_clip() -> Option<f64> {
    Some(5.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_wd")]
    pub weight_decay: f64,
    #[serde(default = "default_betas")]
    pub betas: (f64, f64),
    #[serde(default = "default_eps")]
    pub eps: f64,
    /// Maximum global L2 norm of the loss gradient; `None` disables clipping.
    #[serde(default = "default_clip")]
    pub clip_norm: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: default_lr(),
            weight_decay: default_wd(),
            betas: default_betas(),
            eps: default_eps(),
            clip_norm: default_clip(),
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(format!("learning_rate must be finite and non-negative, got {}", self.learning_rate));
        }
        if self.weight_decay < 0.0 {
            return Err("weight_decay must be non-negative".into());
        }
        let (b1, b2) = self.betas;
        if !((0.0..1.0).contains(&b1) && (0.0..1.0).contains(&b2)) {
            return Err("betas must lie in [0, 1)".into());
        }
        if let Some(c) = self.clip_norm {
            if c <= 0.0 {
                return Err("clip_norm must be positive".into());
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Adam {
    config: AdamConfig,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    step: u64,
}

/// Global L2 norm over a set of gradients.
pub fn global_norm(grads: &[Tensor]) -> f64 {
    grads.iter().map(Tensor::norm_sq).sum::<f64>().sqrt()
}

impl Adam {
    pub fn new(config: AdamConfig, params: &ParamStore) -> Self {
        let zeros: Vec<Tensor> =
            params.entries().iter().map(|e| Tensor::zeros(e.value.rows(), e.value.cols())).collect();
        Self { config, m: zeros.clone(), v: zeros, step: 0 }
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update. `grads` follows the store's parameter order and is
    /// clipped in place. Returns the pre-clip gradient norm.
    pub fn step(&mut self, params: &mut ParamStore, grads: &mut [Tensor]) -> f64 {
        assert_eq!(grads.len(), self.m.len(), "gradient count does not match parameter count");
        let norm = global_norm(grads);
        if let Some(max) = self.config.clip_norm {
            if norm > max {
                let s = max / norm;
                for g in grads.iter_mut() {
                    g.data_mut().iter_mut().for_each(|x| *x *= s);
                }
            }
        }
        self.step += 1;
        let (b1, b2) = self.config.betas;
        let c1 = 1.0 - b1.powi(self.step as i32);
        let c2 = 1.0 - b2.powi(self.step as i32);
        let (lr, wd, eps) = (self.config.learning_rate, self.config.weight_decay, self.config.eps);
        for (((w, g), m), v) in params.tensors_mut().zip(grads.iter()).zip(&mut self.m).zip(&mut self.v) {
            let w = w.data_mut();
            for i in 0..w.len() {
                let gi = g.data()[i] + wd * w[i];
                let mi = &mut m.data_mut()[i];
                *mi = b1 * *mi + (1.0 - b1) * gi;
                let vi = &mut v.data_mut()[i];
                *vi = b2 * *vi + (1.0 - b2) * gi * gi;
                let mhat = m.data()[i] / c1;
                let vhat = v.data()[i] / c2;
                w[i] -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        norm
    }
}
