//! Cosine-schedule DDPM: forward noising, reverse steps and inference on
//! observed traces.
//!
//! Inference on a measured trace uses noise-level matching: the trace noise is
//! estimated, the step `t*` whose forward-process noise-to-signal ratio
//! `sqrt(1 - abar_t) / sqrt(abar_t)` is closest is selected, the trace is
//! scaled by `sqrt(abar_t*)` and the reverse chain runs from `t*` down to 1.

use std::fmt;
use std::str::FromStr;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::rng_from_seed;

pub const DEFAULT_STEPS: usize = 1000;
pub const DEFAULT_OFFSET: f64 = 0.008;
pub const MAX_BETA: f64 = 0.999;

/// Noise schedule. Vectors are indexed by step; index 0 of `betas`/`alphas`
/// is unused and `alpha_bars[0] = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionSchedule {
    pub steps: usize,
    pub offset: f64,
    pub betas: Vec<f64>,
    pub alphas: Vec<f64>,
    pub alpha_bars: Vec<f64>,
}

/// `f(t) = cos^2(((t/T + s) / (1 + s)) * pi/2)`.
pub fn cosine_f(t: f64, steps: usize, offset: f64) -> f64 {
    let arg = ((t / steps as f64 + offset) / (1.0 + offset)) * std::f64::consts::FRAC_PI_2;
    arg.cos().powi(2)
}

pub fn cosine_schedule(steps: usize, offset: f64) -> Result<DiffusionSchedule> {
    if steps < 1 {
        return Err(Error::invalid("schedule needs at least one step"));
    }
    if !(offset > 0.0 && offset < 1.0) {
        return Err(Error::invalid(format!(
            "offset must lie in (0, 1), got {offset}"
        )));
    }
    let mut betas = vec![0.0; steps + 1];
    let mut alphas = vec![1.0; steps + 1];
    let mut alpha_bars = vec![1.0; steps + 1];
    for t in 1..=steps {
        let ratio = cosine_f(t as f64, steps, offset) / cosine_f((t - 1) as f64, steps, offset);
        let beta = (1.0 - ratio).min(MAX_BETA);
        betas[t] = beta;
        alphas[t] = 1.0 - beta;
        alpha_bars[t] = alpha_bars[t - 1] * alphas[t];
    }
    Ok(DiffusionSchedule {
        steps,
        offset,
        betas,
        alphas,
        alpha_bars,
    })
}

impl Default for DiffusionSchedule {
    fn default() -> Self {
        cosine_schedule(DEFAULT_STEPS, DEFAULT_OFFSET).expect("default schedule is valid")
    }
}

impl DiffusionSchedule {
    fn check_step(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps {
            Err(Error::StepOutOfRange {
                t,
                t_max: self.steps,
            })
        } else {
            Ok(())
        }
    }

    /// Forward-process noise-to-signal ratio at step `t`.
    pub fn noise_ratio(&self, t: usize) -> f64 {
        ((1.0 - self.alpha_bars[t]) / self.alpha_bars[t]).sqrt()
    }

    /// First step at which the 0.999 clip is active, if any.
    pub fn first_clipped_step(&self) -> Option<usize> {
        (1..=self.steps).find(|&t| self.betas[t] >= MAX_BETA)
    }
}

/// `x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps`.
pub fn forward_noise(
    x0: &[f64],
    t: usize,
    eps: &[f64],
    sched: &DiffusionSchedule,
) -> Result<Vec<f64>> {
    sched.check_step(t)?;
    if eps.len() != x0.len() {
        return Err(Error::LengthMismatch {
            expected: x0.len(),
            got: eps.len(),
        });
    }
    let a = sched.alpha_bars[t].sqrt();
    let b = (1.0 - sched.alpha_bars[t]).sqrt();
    Ok(x0.iter().zip(eps).map(|(x, e)| a * x + b * e).collect())
}

/// `mu = (x_t - beta_t / sqrt(1 - abar_t) * eps_hat) / sqrt(alpha_t)`.
pub fn posterior_mean(
    x_t: &[f64],
    t: usize,
    eps_hat: &[f64],
    sched: &DiffusionSchedule,
) -> Result<Vec<f64>> {
    sched.check_step(t)?;
    if eps_hat.len() != x_t.len() {
        return Err(Error::LengthMismatch {
            expected: x_t.len(),
            got: eps_hat.len(),
        });
    }
    let coef = sched.betas[t] / (1.0 - sched.alpha_bars[t]).sqrt();
    let inv = 1.0 / sched.alphas[t].sqrt();
    Ok(x_t
        .iter()
        .zip(eps_hat)
        .map(|(x, e)| (x - coef * e) * inv)
        .collect())
}

/// One ancestral step with fixed variance `beta_t`. `z = None` means zero.
pub fn reverse_step(
    x_t: &[f64],
    t: usize,
    eps_hat: &[f64],
    z: Option<&[f64]>,
    sched: &DiffusionSchedule,
) -> Result<Vec<f64>> {
    let mut mu = posterior_mean(x_t, t, eps_hat, sched)?;
    if let Some(z) = z {
        if z.len() != mu.len() {
            return Err(Error::LengthMismatch {
                expected: mu.len(),
                got: z.len(),
            });
        }
        if t == 1 && z.iter().any(|&v| v != 0.0) {
            return Err(Error::invalid(
                "the final reverse step (t = 1) must be noise-free",
            ));
        }
        let sd = sched.betas[t].sqrt();
        for (m, zi) in mu.iter_mut().zip(z) {
            *m += sd * zi;
        }
    }
    Ok(mu)
}

/// Robust noise level from first differences (MAD of increments).
pub fn estimate_noise_rms(y: &[f64]) -> Result<f64> {
    if y.len() < 16 {
        return Err(Error::invalid(format!(
            "noise estimation needs >= 16 samples, got {}",
            y.len()
        )));
    }
    let mut d: Vec<f64> = y.windows(2).map(|w| (w[1] - w[0]).abs()).collect();
    let mid = d.len() / 2;
    let median = if d.len() % 2 == 1 {
        *d.select_nth_unstable_by(mid, f64::total_cmp).1
    } else {
        let hi = *d.select_nth_unstable_by(mid, f64::total_cmp).1;
        let lo = d[..mid].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lo + hi)
    };
    Ok(median / (std::f64::consts::SQRT_2 * 0.6745))
}

/// Step whose noise ratio is closest to `sigma_obs`; ties go to the smaller step.
pub fn match_timestep(sigma_obs: f64, sched: &DiffusionSchedule) -> usize {
    let mut best = 1;
    let mut best_gap = f64::INFINITY;
    for t in 1..=sched.steps {
        let gap = (sched.noise_ratio(t) - sigma_obs).abs();
        if gap < best_gap {
            best = t;
            best_gap = gap;
        }
    }
    best
}

/// Anything that predicts the injected noise `eps_theta(x_t, t)`.
pub trait NoisePredictor {
    fn predict_noise(&self, x_t: &[f64], t: usize) -> Result<Vec<f64>>;

    /// Required input length, if fixed.
    fn input_len(&self) -> Option<usize> {
        None
    }
}

impl<F> NoisePredictor for F
where
    F: Fn(&[f64], usize) -> Vec<f64>,
{
    fn predict_noise(&self, x_t: &[f64], t: usize) -> Result<Vec<f64>> {
        Ok(self(x_t, t))
    }
}

/// Noise injected by the reverse chain between steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sampler {
    /// `z = 0` at every step: the chain follows the posterior means.
    #[default]
    Mean,
    /// `z ~ N(0, I)` for `t > 1`.
    Ancestral,
}

impl fmt::Display for Sampler {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Sampler::Mean => "mean",
            Sampler::Ancestral => "ancestral",
        })
    }
}

impl FromStr for Sampler {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(Sampler::Mean),
            "ancestral" => Ok(Sampler::Ancestral),
            other => Err(Error::invalid(format!("unknown sampler {other:?}"))),
        }
    }
}

/// Denoise a normalised observation with the noise-matched partial reverse
/// chain. Deterministic in `(y, model, t_start, seed)`.
pub fn denoise<P: NoisePredictor + ?Sized>(
    y: &[f64],
    model: &P,
    sched: &DiffusionSchedule,
    t_start: Option<usize>,
    sampler: Sampler,
    seed: u64,
) -> Result<Vec<f64>> {
    if let Some(len) = model.input_len() {
        if len != y.len() {
            return Err(Error::LengthMismatch {
                expected: len,
                got: y.len(),
            });
        }
    }
    let t_start = match t_start {
        Some(t) => {
            sched.check_step(t)?;
            t
        }
        None => match_timestep(estimate_noise_rms(y)?, sched),
    };
    let scale = sched.alpha_bars[t_start].sqrt();
    let mut x: Vec<f64> = y.iter().map(|v| scale * v).collect();
    let mut rng = rng_from_seed(seed);
    let mut z = vec![0.0; y.len()];
    for t in (1..=t_start).rev() {
        let eps_hat = model.predict_noise(&x, t)?;
        if eps_hat.len() != x.len() {
            return Err(Error::LengthMismatch {
                expected: x.len(),
                got: eps_hat.len(),
            });
        }
        if eps_hat.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("noise predictor at step {t}")));
        }
        let noise = if t > 1 && sampler == Sampler::Ancestral {
            for zi in z.iter_mut() {
                *zi = StandardNormal.sample(&mut rng);
            }
            Some(z.as_slice())
        } else {
            None
        };
        x = reverse_step(&x, t, &eps_hat, noise, sched)?;
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("reverse chain output".into()));
    }
    Ok(x)
}
