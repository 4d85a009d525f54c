//! Training of the noise predictor: weighted Smooth-L1 objective, timestep
//! sampling, AdamW with cosine annealing and the checkpoint container.

mod checkpoint;
mod fit;
pub mod loss;
mod optim;
mod sampler;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use checkpoint::{Checkpoint, FORMAT_VERSION, MAGIC};
pub use fit::{Draw, Trainer};
pub use loss::{total_loss, EdgeMode, LossConfig};
pub use optim::{cosine_anneal_lr, AdamW, ADAM_EPS, BETA1, BETA2};
pub use sampler::TimestepSampler;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub lr0: f64,
    pub lr_min: f64,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 150,
            batch: 16,
            lr0: 7.61e-5,
            lr_min: 1e-6,
            weight_decay: 1e-4,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch == 0 {
            return Err(Error::invalid("epochs and batch must be >= 1"));
        }
        if !(self.lr_min >= 0.0 && self.lr_min <= self.lr0 && self.lr0.is_finite()) {
            return Err(Error::invalid(format!(
                "learning rates need 0 <= lr_min <= lr0, got lr_min {} lr0 {}",
                self.lr_min, self.lr0
            )));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::invalid("weight_decay must be finite and >= 0"));
        }
        Ok(())
    }

    /// Learning rate used throughout epoch `epoch` (0-based).
    pub fn lr(&self, epoch: usize) -> f64 {
        cosine_anneal_lr(epoch, self.epochs, self.lr0, self.lr_min)
    }
}
