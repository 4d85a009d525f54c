//! Gaussian white and pink noise calibrated to the step-height SNR.
//!
//! SNR is the minimum gap between adjacent levels divided by the noise
//! peak-to-peak amplitude, with peak-to-peak fixed at `6 * rms`. Hence
//! `rms = gap_min / (6 * snr)`.

use std::fmt;
use std::str::FromStr;

use rand_distr::{Distribution, StandardNormal};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::rng_from_seed;
use crate::sigsim::StepwiseTrace;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseKind {
    White,
    Pink,
}

impl fmt::Display for NoiseKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NoiseKind::White => "white",
            NoiseKind::Pink => "pink",
        })
    }
}

impl FromStr for NoiseKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "white" => Ok(NoiseKind::White),
            "pink" => Ok(NoiseKind::Pink),
            other => Err(Error::invalid(format!("unknown noise kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    pub snr: f64,
    pub seed: u64,
}

/// Smallest gap between adjacent distinct levels.
pub fn min_level_gap(levels: &[f64]) -> Result<f64> {
    let mut sorted: Vec<f64> = levels.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();
    if sorted.len() < 2 {
        return Err(Error::invalid("need at least 2 distinct levels"));
    }
    Ok(sorted
        .windows(2)
        .map(|w| w[1] - w[0])
        .fold(f64::INFINITY, f64::min))
}

pub fn snr_to_rms(levels: &[f64], snr: f64) -> Result<f64> {
    if !(snr > 0.0) {
        return Err(Error::invalid(format!("SNR must be > 0, got {snr}")));
    }
    Ok(min_level_gap(levels)? / (6.0 * snr))
}

pub fn white_noise(n: usize, rms: f64, seed: u64) -> Vec<f64> {
    let mut rng = rng_from_seed(seed);
    (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            rms * z
        })
        .collect()
}

/// 1/f noise by spectral shaping of a white Gaussian sequence.
///
/// Bin `k` is scaled by `1/sqrt(f_k)` with `f_k = min(k, n-k)/n`, the DC bin is
/// zeroed, and the inverse transform is rescaled to exactly `rms`.
pub fn pink_noise(n: usize, rms: f64, seed: u64) -> Result<Vec<f64>> {
    if n < 4 {
        return Err(Error::invalid(format!("pink noise needs n >= 4, got {n}")));
    }
    let white = white_noise(n, 1.0, seed);
    let mut planner = FftPlanner::<f64>::new();
    let mut buf: Vec<Complex<f64>> = white.iter().map(|&v| Complex::new(v, 0.0)).collect();
    planner.plan_fft_forward(n).process(&mut buf);
    buf[0] = Complex::new(0.0, 0.0);
    for (k, c) in buf.iter_mut().enumerate().skip(1) {
        let f = k.min(n - k) as f64 / n as f64;
        *c *= 1.0 / f.sqrt();
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    let mut out: Vec<f64> = buf.iter().map(|c| c.re).collect();
    let mean = out.iter().sum::<f64>() / n as f64;
    for v in &mut out {
        *v -= mean;
    }
    let current = (out.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt();
    if current > 0.0 {
        let scale = rms / current;
        for v in &mut out {
            *v *= scale;
        }
    }
    Ok(out)
}

pub fn noise(kind: NoiseKind, n: usize, rms: f64, seed: u64) -> Result<Vec<f64>> {
    match kind {
        NoiseKind::White => Ok(white_noise(n, rms, seed)),
        NoiseKind::Pink => pink_noise(n, rms, seed),
    }
}

/// Add calibrated noise to a clean trace. The RMS is derived from the trace's
/// own level set, so every `K`-state trace gets the same absolute noise.
pub fn corrupt(trace: &StepwiseTrace, spec: &NoiseSpec) -> Result<Vec<f64>> {
    let rms = if spec.snr.is_infinite() {
        0.0
    } else {
        snr_to_rms(&trace.levels(), spec.snr)?
    };
    let n = noise(spec.kind, trace.values.len(), rms, spec.seed)?;
    Ok(trace.values.iter().zip(&n).map(|(x, e)| x + e).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sigsim::{levels_from_path, StatePath};

    #[test]
    fn rms_examples() {
        assert!((snr_to_rms(&[0.0, 1.0], 1.0).unwrap() - 1.0 / 6.0).abs() < 1e-15);
        assert!((snr_to_rms(&[0.0, 0.5, 1.0], 3.0).unwrap() - 0.5 / 18.0).abs() < 1e-15);
        let lv = [0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0];
        assert!((snr_to_rms(&lv, 0.25).unwrap() - (1.0 / 3.0) / 1.5).abs() < 1e-12);
        assert!(snr_to_rms(&[0.5, 0.5], 1.0).is_err());
        assert!(snr_to_rms(&[0.0, 1.0], 0.0).is_err());
    }

    #[test]
    fn zero_rms_white_is_zero() {
        assert!(white_noise(100, 0.0, 1).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn white_moments() {
        let n = 1_000_000;
        let x = white_noise(n, 0.1, 9);
        let mean = x.iter().sum::<f64>() / n as f64;
        let sd = (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
        assert!((sd / 0.1 - 1.0).abs() < 0.01);
        assert!(mean.abs() < 4.0 * 0.1 / (n as f64).sqrt());
    }

    #[test]
    fn pink_is_exactly_normalised() {
        let x = pink_noise(4096, 0.25, 3).unwrap();
        let mean = x.iter().sum::<f64>() / x.len() as f64;
        let rms = (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt();
        assert!(mean.abs() < 1e-9);
        assert!((rms - 0.25).abs() < 1e-9);
        assert!(pink_noise(3, 1.0, 0).is_err());
    }

    #[test]
    fn corrupt_limits_and_determinism() {
        let tr = levels_from_path(
            &StatePath {
                states: vec![0, 1, 1, 0, 1],
            },
            2,
        )
        .unwrap();
        let inf = NoiseSpec {
            kind: NoiseKind::White,
            snr: f64::INFINITY,
            seed: 1,
        };
        assert_eq!(corrupt(&tr, &inf).unwrap(), tr.values);
        let spec = NoiseSpec {
            kind: NoiseKind::Pink,
            snr: 1.0,
            seed: 5,
        };
        assert_eq!(corrupt(&tr, &spec).unwrap(), corrupt(&tr, &spec).unwrap());
    }

    #[test]
    fn kind_parsing() {
        assert_eq!("pink".parse::<NoiseKind>().unwrap(), NoiseKind::Pink);
        assert!("brown".parse::<NoiseKind>().is_err());
    }
}
