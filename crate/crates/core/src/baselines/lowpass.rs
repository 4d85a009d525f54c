//! Butterworth low-pass filtering as second-order sections, plus the
//! Score-driven cutoff search.

use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evalkit::{evaluate, DatasetReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhaseMode {
    Causal,
    #[default]
    ZeroPhase,
}

impl FromStr for PhaseMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "causal" => Ok(PhaseMode::Causal),
            "zero_phase" | "zero-phase" => Ok(PhaseMode::ZeroPhase),
            other => Err(Error::invalid(format!("unknown phase mode {other:?}"))),
        }
    }
}

/// `n` log-spaced values from `lo` to `hi` inclusive.
pub fn log_spaced(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n)
            .map(|i| lo * (hi / lo).powf(i as f64 / (n - 1) as f64))
            .collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LowpassConfig {
    pub order: usize,
    /// Candidate cutoffs in cycles/sample.
    pub cutoffs: Vec<f64>,
    pub phase_mode: PhaseMode,
}

impl Default for LowpassConfig {
    fn default() -> Self {
        Self {
            order: 4,
            cutoffs: log_spaced(0.01, 0.08, 8),
            phase_mode: PhaseMode::ZeroPhase,
        }
    }
}

impl LowpassConfig {
    pub fn validate(&self) -> Result<()> {
        if self.order == 0 {
            return Err(Error::invalid("filter order must be >= 1"));
        }
        if let Some(fc) = self.cutoffs.iter().find(|&&f| !(f > 0.0 && f < 0.5)) {
            return Err(Error::invalid(format!("cutoff {fc} outside (0, 0.5)")));
        }
        Ok(())
    }
}

/// One biquad in transposed direct form II; `a0` is normalised to 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 3],
}

impl Biquad {
    fn run(&self, x: &mut [f64], mut z: [f64; 2]) {
        let [b0, b1, b2] = self.b;
        let [_, a1, a2] = self.a;
        for v in x.iter_mut() {
            let xi = *v;
            let y = b0 * xi + z[0];
            z[0] = b1 * xi - a1 * y + z[1];
            z[1] = b2 * xi - a2 * y;
            *v = y;
        }
    }

    /// State that makes a constant input `c` pass through unchanged.
    fn steady_state(&self, c: f64) -> [f64; 2] {
        let z1 = (self.b[2] - self.a[2]) * c;
        [(self.b[1] - self.a[1]) * c + z1, z1]
    }

    fn is_stable(&self) -> bool {
        let [_, a1, a2] = self.a;
        a2.abs() < 1.0 && a1.abs() < 1.0 + a2
    }
}

/// Digital Butterworth low-pass of order `order` with its -3 dB point at
/// `fc` cycles/sample, via the prewarped bilinear transform.
pub fn butterworth_sections(fc: f64, order: usize) -> Result<Vec<Biquad>> {
    if !(fc > 0.0 && fc < 0.5) {
        return Err(Error::invalid(format!("cutoff {fc} outside (0, 0.5)")));
    }
    if order == 0 {
        return Err(Error::invalid("filter order must be >= 1"));
    }
    let k = (std::f64::consts::PI * fc).tan();
    let k2 = k * k;
    let mut sections = Vec::with_capacity(order.div_ceil(2));
    for i in 0..order / 2 {
        let theta = (2 * i + 1) as f64 * std::f64::consts::PI / (2 * order) as f64;
        let q = 1.0 / (2.0 * theta.sin());
        let norm = 1.0 / (1.0 + k / q + k2);
        let b0 = k2 * norm;
        sections.push(Biquad {
            b: [b0, 2.0 * b0, b0],
            a: [1.0, 2.0 * (k2 - 1.0) * norm, (1.0 - k / q + k2) * norm],
        });
    }
    if order % 2 == 1 {
        let b0 = k / (1.0 + k);
        sections.push(Biquad {
            b: [b0, b0, 0.0],
            a: [1.0, (k - 1.0) / (k + 1.0), 0.0],
        });
    }
    if let Some(s) = sections.iter().find(|s| !s.is_stable()) {
        return Err(Error::Numerical(format!("unstable filter section {s:?}")));
    }
    Ok(sections)
}

/// Cascade the sections over `x` from rest.
pub fn sosfilt(sections: &[Biquad], x: &[f64]) -> Vec<f64> {
    let mut y = x.to_vec();
    for s in sections {
        s.run(&mut y, [0.0; 2]);
    }
    y
}

fn sosfilt_steady(sections: &[Biquad], y: &mut [f64]) {
    for s in sections {
        let c = y.first().copied().unwrap_or(0.0);
        s.run(y, s.steady_state(c));
    }
}

/// Forward-backward filtering with odd extension at both ends and
/// steady-state initial conditions.
pub fn sosfiltfilt(sections: &[Biquad], x: &[f64]) -> Vec<f64> {
    let n = x.len();
    if n == 0 {
        return Vec::new();
    }
    let pad = (3 * (2 * sections.len() + 1)).min(n - 1);
    let mut ext = Vec::with_capacity(n + 2 * pad);
    ext.extend((1..=pad).rev().map(|i| 2.0 * x[0] - x[i]));
    ext.extend_from_slice(x);
    ext.extend((1..=pad).map(|i| 2.0 * x[n - 1] - x[n - 1 - i]));
    sosfilt_steady(sections, &mut ext);
    ext.reverse();
    sosfilt_steady(sections, &mut ext);
    ext.reverse();
    ext[pad..pad + n].to_vec()
}

pub fn butterworth_lowpass(
    signal: &[f64],
    fc: f64,
    order: usize,
    mode: PhaseMode,
) -> Result<Vec<f64>> {
    if signal.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("signal contains non-finite values"));
    }
    let sections = butterworth_sections(fc, order)?;
    Ok(match mode {
        PhaseMode::Causal => sosfilt(&sections, signal),
        PhaseMode::ZeroPhase => sosfiltfilt(&sections, signal),
    })
}

/// A set of noisy traces with ground truth, for baseline tuning.
#[derive(Debug, Clone, Copy)]
pub struct LabelledTrace<'a> {
    pub id: &'a str,
    pub noisy: &'a [f64],
    pub clean: &'a [f64],
    pub k: usize,
}

#[derive(Debug, Clone)]
pub struct CutoffReport {
    pub fc: f64,
    pub report: DatasetReport,
}

#[derive(Debug, Clone)]
pub struct CutoffSearch {
    pub best_fc: f64,
    /// One entry per candidate, in ascending cutoff order.
    pub candidates: Vec<CutoffReport>,
}

impl CutoffSearch {
    pub fn best(&self) -> &CutoffReport {
        self.candidates
            .iter()
            .find(|c| c.fc == self.best_fc)
            .expect("best cutoff is among the candidates")
    }
}

pub fn evaluate_cutoff(
    traces: &[LabelledTrace<'_>],
    fc: f64,
    cfg: &LowpassConfig,
) -> Result<DatasetReport> {
    let reports = traces
        .par_iter()
        .map(|t| {
            let y = butterworth_lowpass(t.noisy, fc, cfg.order, cfg.phase_mode)?;
            evaluate(t.id, &y, t.clean, t.k)
        })
        .collect::<Result<Vec<_>>>()?;
    DatasetReport::from_reports(reports)
}

/// Pick the cutoff with the highest mean per-trace Score; ties go to the
/// larger cutoff.
pub fn grid_search_cutoff(
    traces: &[LabelledTrace<'_>],
    cfg: &LowpassConfig,
) -> Result<CutoffSearch> {
    cfg.validate()?;
    if cfg.cutoffs.is_empty() {
        return Err(Error::invalid("no candidate cutoffs"));
    }
    if traces.is_empty() {
        return Err(Error::invalid("no traces to tune on"));
    }
    let mut fcs = cfg.cutoffs.clone();
    fcs.sort_by(f64::total_cmp);
    fcs.dedup();
    let candidates = fcs
        .iter()
        .map(|&fc| evaluate_cutoff(traces, fc, cfg).map(|report| CutoffReport { fc, report }))
        .collect::<Result<Vec<_>>>()?;
    let best = candidates
        .iter()
        .fold(None::<&CutoffReport>, |best, c| match best {
            Some(b) if b.report.score_mean_of_traces > c.report.score_mean_of_traces => Some(b),
            _ => Some(c),
        })
        .expect("at least one candidate");
    Ok(CutoffSearch {
        best_fc: best.fc,
        candidates,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sine(f: f64, n: usize) -> Vec<f64> {
        (0..n)
            .map(|i| (2.0 * std::f64::consts::PI * f * i as f64).sin())
            .collect()
    }

    fn amplitude_db(y: &[f64], f: f64) -> f64 {
        // project the settled tail onto sin/cos at f
        let tail = &y[y.len() / 2..];
        let off = y.len() / 2;
        let (mut s, mut c) = (0.0, 0.0);
        for (i, v) in tail.iter().enumerate() {
            let ph = 2.0 * std::f64::consts::PI * f * (i + off) as f64;
            s += v * ph.sin();
            c += v * ph.cos();
        }
        let amp = 2.0 * (s * s + c * c).sqrt() / tail.len() as f64;
        20.0 * amp.log10()
    }

    #[test]
    fn log_spacing() {
        let c = log_spaced(0.01, 0.08, 8);
        assert_eq!(c.len(), 8);
        assert!((c[0] - 0.01).abs() < 1e-15 && (c[7] - 0.08).abs() < 1e-15);
        for w in c.windows(3) {
            assert!((w[1] / w[0] - w[2] / w[1]).abs() < 1e-12);
        }
    }

    #[test]
    fn magnitude_matches_closed_form() {
        let fc = 0.02;
        for (mult, tol_db) in [(1.0, 0.02 * 3.0103), (4.0, 1.0), (0.5, 0.05)] {
            let f = fc * mult;
            let n = 40_000;
            let y = butterworth_lowpass(&sine(f, n), fc, 4, PhaseMode::Causal).unwrap();
            let want = -10.0 * (1.0 + (f / fc).powi(8)).log10();
            let got = amplitude_db(&y, f);
            assert!((got - want).abs() < tol_db, "f={f}: {got} dB vs {want} dB");
        }
    }

    #[test]
    fn unit_dc_gain_in_both_modes() {
        let x = vec![0.7; 500];
        let y = butterworth_lowpass(&x, 0.03, 4, PhaseMode::Causal).unwrap();
        assert!((y[499] - 0.7).abs() < 1e-9);
        let z = butterworth_lowpass(&x, 0.03, 4, PhaseMode::ZeroPhase).unwrap();
        assert!(z.iter().all(|v| (v - 0.7).abs() < 1e-12));
        for order in 1..=7 {
            let s = butterworth_sections(0.1, order).unwrap();
            let y = sosfilt(&s, &vec![1.0; 2000]);
            assert!((y[1999] - 1.0).abs() < 1e-9, "order {order}");
        }
    }

    #[test]
    fn zero_phase_has_no_lag() {
        let n = 400;
        let step: Vec<f64> = (0..n).map(|i| if i < 200 { 0.0 } else { 1.0 }).collect();
        let y = butterworth_lowpass(&step, 0.03, 4, PhaseMode::ZeroPhase).unwrap();
        let xc = |lag: isize| -> f64 {
            let (mx, my) = (0.5, y.iter().sum::<f64>() / n as f64);
            (0..n as isize)
                .filter_map(|i| {
                    let j = i + lag;
                    (0..n as isize)
                        .contains(&j)
                        .then(|| (step[i as usize] - mx) * (y[j as usize] - my))
                })
                .sum()
        };
        let best = (-30..=30).max_by(|&a, &b| xc(a).total_cmp(&xc(b))).unwrap();
        assert_eq!(best, 0);
        let causal = butterworth_lowpass(&step, 0.03, 4, PhaseMode::Causal).unwrap();
        let half = causal.iter().position(|&v| v >= 0.5).unwrap();
        assert!(half > 202);
    }

    #[test]
    fn rejects_bad_cutoffs() {
        assert!(butterworth_sections(0.0, 4).is_err());
        assert!(butterworth_sections(0.5, 4).is_err());
        assert!(butterworth_sections(0.1, 0).is_err());
        assert!(butterworth_lowpass(&[f64::NAN], 0.1, 4, PhaseMode::Causal).is_err());
        assert!(LowpassConfig {
            cutoffs: vec![0.6],
            ..LowpassConfig::default()
        }
        .validate()
        .is_err());
    }

    #[test]
    fn short_signals() {
        assert!(butterworth_lowpass(&[], 0.1, 4, PhaseMode::ZeroPhase)
            .unwrap()
            .is_empty());
        assert!(
            (butterworth_lowpass(&[2.0], 0.1, 4, PhaseMode::ZeroPhase).unwrap()[0] - 2.0).abs()
                < 1e-12
        );
        assert_eq!(
            butterworth_lowpass(&[1.0, 3.0], 0.1, 4, PhaseMode::ZeroPhase)
                .unwrap()
                .len(),
            2
        );
    }
}
