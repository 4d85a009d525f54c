//! 1-D U-Net noise predictor with hand-written backward passes.
//!
//! The network is generic over [`Real`]: `f32` for training and inference,
//! `f64` for finite-difference gradient checks.

mod blocks;
mod layers;
mod params;
mod real;
mod unet;

use serde::{Deserialize, Serialize};

use crate::diffusion::NoisePredictor;
use crate::error::{Error, Result};

pub use blocks::sinusoid;
pub use params::{Init, ParamId, ParamLayout, ParamSpec, ParamStore};
pub use real::Real;
pub use unet::{Tape, UNet};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetConfig {
    pub base_channels: usize,
    pub channel_mults: Vec<usize>,
    pub heads: usize,
    pub norm_groups: usize,
    pub time_embed_dim: usize,
    pub input_len: usize,
    pub padded_len: usize,
    /// Largest step index the time embedding is scaled for.
    pub diffusion_steps: usize,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self::with_base(32)
    }
}

impl NetConfig {
    pub fn with_base(base_channels: usize) -> Self {
        Self {
            base_channels,
            channel_mults: vec![1, 2, 4, 8],
            heads: 4,
            norm_groups: 16,
            time_embed_dim: 4 * base_channels,
            input_len: 1000,
            padded_len: 1024,
            diffusion_steps: crate::diffusion::DEFAULT_STEPS,
        }
    }

    /// Full-size network: 192 base channels.
    pub fn full() -> Self {
        Self::with_base(192)
    }

    /// Small configuration used for gradient checks.
    pub fn tiny() -> Self {
        Self {
            base_channels: 8,
            channel_mults: vec![1, 2],
            heads: 2,
            norm_groups: 4,
            time_embed_dim: 32,
            input_len: 64,
            padded_len: 64,
            diffusion_steps: crate::diffusion::DEFAULT_STEPS,
        }
    }

    pub fn depth(&self) -> usize {
        self.channel_mults.len()
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::invalid(format!("network config: {msg}")));
        if self.base_channels == 0 || self.base_channels % 2 != 0 {
            return fail(format!(
                "base_channels {} must be even and positive",
                self.base_channels
            ));
        }
        if self.channel_mults.is_empty() || self.channel_mults.contains(&0) {
            return fail("channel_mults must be non-empty and positive".into());
        }
        if self.heads == 0 || self.norm_groups == 0 || self.time_embed_dim == 0 {
            return fail("heads, norm_groups and time_embed_dim must be positive".into());
        }
        for m in std::iter::once(1).chain(self.channel_mults.iter().copied()) {
            let c = self.base_channels * m;
            if c % self.norm_groups != 0 {
                return fail(format!(
                    "{c} channels not divisible by {} groups",
                    self.norm_groups
                ));
            }
            if c % self.heads != 0 {
                return fail(format!(
                    "{c} channels not divisible by {} heads",
                    self.heads
                ));
            }
        }
        let factor = 1usize << self.depth();
        if self.padded_len % factor != 0 {
            return fail(format!(
                "padded_len {} not divisible by {factor}",
                self.padded_len
            ));
        }
        if self.input_len < 2 || self.padded_len < self.input_len {
            return fail(format!(
                "input_len {} must be >= 2 and <= padded_len {}",
                self.input_len, self.padded_len
            ));
        }
        let pad = self.padded_len - self.input_len;
        if pad - pad / 2 >= self.input_len {
            return fail("padding wider than the input".into());
        }
        if self.diffusion_steps == 0 {
            return fail("diffusion_steps must be positive".into());
        }
        Ok(())
    }
}

/// A network paired with `f32` parameters, usable as a noise predictor.
#[derive(Debug, Clone)]
pub struct UNetPredictor {
    net: UNet,
    params: ParamStore<f32>,
}

impl UNetPredictor {
    pub fn new(params: ParamStore<f32>) -> Result<Self> {
        let net = UNet::new(params.config().clone())?;
        if net.layout() != params.layout() {
            return Err(Error::invalid("parameter layout does not match its config"));
        }
        Ok(Self { net, params })
    }

    pub fn net(&self) -> &UNet {
        &self.net
    }

    pub fn params(&self) -> &ParamStore<f32> {
        &self.params
    }
}

impl NoisePredictor for UNetPredictor {
    fn predict_noise(&self, x_t: &[f64], t: usize) -> Result<Vec<f64>> {
        let x: Vec<f32> = x_t.iter().map(|&v| v as f32).collect();
        let y = self.net.forward(&self.params, &x, t)?;
        Ok(y.into_iter().map(f64::from).collect())
    }

    fn input_len(&self) -> Option<usize> {
        Some(self.net.config().input_len)
    }
}
