use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Adam with decoupled weight decay. The decay is applied as
/// `p *= 1 - lr * wd` before the moment update.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamW {
    pub weight_decay: f64,
    pub step: u64,
    pub m: Vec<f32>,
    pub v: Vec<f32>,
}

impl AdamW {
    pub fn new(num_params: usize, weight_decay: f64) -> Self {
        Self {
            weight_decay,
            step: 0,
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
        }
    }

    pub fn update(&mut self, params: &mut [f32], grads: &[f32], lr: f64) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::LengthMismatch {
                expected: self.m.len(),
                got: params.len().min(grads.len()),
            });
        }
        self.step += 1;
        let bc1 = 1.0 - BETA1.powf(self.step as f64);
        let bc2 = 1.0 - BETA2.powf(self.step as f64);
        let decay = (1.0 - lr * self.weight_decay) as f32;
        let step_size = (lr / bc1) as f32;
        let inv_bc2 = (1.0 / bc2.sqrt()) as f32;
        let (b1, b2, eps) = (BETA1 as f32, BETA2 as f32, ADAM_EPS as f32);
        for (((p, &g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            *p *= decay;
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            *p -= step_size * *m / (v.sqrt() * inv_bc2 + eps);
        }
        Ok(())
    }
}

/// `lr_min + (lr0 - lr_min) * (1 + cos(pi * epoch / epochs)) / 2`.
pub fn cosine_anneal_lr(epoch: usize, epochs: usize, lr0: f64, lr_min: f64) -> f64 {
    let frac = epoch.min(epochs) as f64 / epochs.max(1) as f64;
    lr_min + 0.5 * (lr0 - lr_min) * (1.0 + (std::f64::consts::PI * frac).cos())
}
