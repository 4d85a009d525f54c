use rand::Rng;

use crate::error::{Error, Result};

/// Draws `t` from `p(t) ∝ exp(-3t/T)` on `{1..T}` by inverse CDF.
#[derive(Debug, Clone)]
pub struct TimestepSampler {
    cdf: Vec<f64>,
}

impl TimestepSampler {
    pub fn new(steps: usize) -> Result<Self> {
        if steps == 0 {
            return Err(Error::invalid("timestep sampler needs T >= 1"));
        }
        let w: Vec<f64> = (1..=steps)
            .map(|t| (-3.0 * t as f64 / steps as f64).exp())
            .collect();
        let z: f64 = w.iter().sum();
        let mut acc = 0.0;
        let mut cdf: Vec<f64> = w
            .iter()
            .map(|v| {
                acc += v / z;
                acc
            })
            .collect();
        *cdf.last_mut().expect("steps >= 1") = 1.0;
        Ok(Self { cdf })
    }

    pub fn steps(&self) -> usize {
        self.cdf.len()
    }

    /// Probability of drawing `t` (zero outside `1..=T`).
    pub fn prob(&self, t: usize) -> f64 {
        match t {
            0 => 0.0,
            1 => self.cdf[0],
            t if t <= self.cdf.len() => self.cdf[t - 1] - self.cdf[t - 2],
            _ => 0.0,
        }
    }

    pub fn cdf(&self, t: usize) -> f64 {
        if t == 0 {
            0.0
        } else {
            self.cdf[(t - 1).min(self.cdf.len() - 1)]
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.gen();
        self.cdf.partition_point(|&c| c <= u) + 1
    }
}
