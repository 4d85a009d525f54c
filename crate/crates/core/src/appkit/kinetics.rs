//! Two-state dwell-time kinetics for sm-FRET style traces.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MIN_DWELLS: usize = 10;
const HIST_BINS: usize = 20;

/// Run lengths times `dt` for each state, without the first and last runs.
pub fn dwell_times(states: &[usize], dt: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    if let Some(&s) = states.iter().find(|&&s| s > 1) {
        return Err(Error::invalid(format!(
            "dwell analysis expects states 0/1, got {s}"
        )));
    }
    let mut runs: Vec<(usize, usize)> = Vec::new();
    for &s in states {
        match runs.last_mut() {
            Some((state, n)) if *state == s => *n += 1,
            _ => runs.push((s, 1)),
        }
    }
    let mut out = (Vec::new(), Vec::new());
    if runs.len() > 2 {
        for &(s, n) in &runs[1..runs.len() - 1] {
            let d = n as f64 * dt;
            if s == 0 {
                out.0.push(d);
            } else {
                out.1.push(d);
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    /// Count normalised by bin width and total.
    pub density: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    /// Maximum-likelihood exponential rate, `1 / mean dwell`.
    pub rate: f64,
    pub mean_dwell: f64,
    pub n: usize,
    /// Log-spaced dwell histogram for plotting.
    pub histogram: Vec<HistBin>,
}

pub fn log_histogram(values: &[f64], bins: usize) -> Vec<HistBin> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if values.is_empty() || !(lo > 0.0) || bins == 0 {
        return Vec::new();
    }
    let hi = if hi > lo { hi } else { lo * 2.0 };
    let edges: Vec<f64> = (0..=bins)
        .map(|i| lo * (hi / lo).powf(i as f64 / bins as f64))
        .collect();
    let mut counts = vec![0usize; bins];
    let span = (hi / lo).ln();
    for &v in values {
        let i = (((v / lo).ln() / span) * bins as f64).floor() as usize;
        counts[i.min(bins - 1)] += 1;
    }
    let total = values.len() as f64;
    edges
        .windows(2)
        .zip(counts)
        .map(|(e, count)| HistBin {
            lo: e[0],
            hi: e[1],
            count,
            density: count as f64 / (total * (e[1] - e[0])),
        })
        .collect()
}

pub fn fit_rate(dwells: &[f64]) -> Result<RateFit> {
    if dwells.len() < MIN_DWELLS {
        return Err(Error::invalid(format!(
            "rate fit needs >= {MIN_DWELLS} dwells, got {}",
            dwells.len()
        )));
    }
    if dwells.iter().any(|d| !(*d > 0.0 && d.is_finite())) {
        return Err(Error::invalid("dwell times must be positive and finite"));
    }
    let mean = dwells.iter().sum::<f64>() / dwells.len() as f64;
    Ok(RateFit {
        rate: 1.0 / mean,
        mean_dwell: mean,
        n: dwells.len(),
        histogram: log_histogram(dwells, HIST_BINS),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KineticsReport {
    /// Low and high state levels.
    pub levels: [f64; 2],
    pub threshold: f64,
    /// Exit rate of the low state, per second.
    pub k12: Option<f64>,
    /// Exit rate of the high state, per second.
    pub k21: Option<f64>,
    pub dwell_counts: [usize; 2],
    pub fits: [Option<RateFit>; 2],
    /// Set when a state has too few dwells for a rate.
    pub flags: Vec<String>,
}

fn cluster_means(y: &[f64], split: f64) -> Option<[f64; 2]> {
    let (mut s, mut n) = ([0.0; 2], [0usize; 2]);
    for &v in y {
        let i = usize::from(v > split);
        s[i] += v;
        n[i] += 1;
    }
    (n[0] > 0 && n[1] > 0).then(|| [s[0] / n[0] as f64, s[1] / n[1] as f64])
}

/// Two-level estimate: split at the mid-range, then re-split once at the
/// midpoint of the cluster means.
pub fn fret_levels(y: &[f64]) -> Result<[f64; 2]> {
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("trace contains non-finite values"));
    }
    let lo = y.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let no_split = || Error::invalid("trace does not separate into two levels");
    let first = cluster_means(y, 0.5 * (lo + hi)).ok_or_else(no_split)?;
    cluster_means(y, 0.5 * (first[0] + first[1])).ok_or_else(no_split)
}

/// Kinetics of a denoised two-state trace sampled every `dt` seconds.
/// `threshold` overrides the level midpoint.
pub fn analyze_fret(y: &[f64], dt: f64, threshold: Option<f64>) -> Result<KineticsReport> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::invalid(format!(
            "sample interval must be > 0, got {dt}"
        )));
    }
    let levels = fret_levels(y)?;
    let threshold = threshold.unwrap_or(0.5 * (levels[0] + levels[1]));
    let states: Vec<usize> = y.iter().map(|&v| usize::from(v > threshold)).collect();
    let (d0, d1) = dwell_times(&states, dt)?;
    let mut flags = Vec::new();
    let mut fit = |d: &[f64], name: &str| match fit_rate(d) {
        Ok(f) => Some(f),
        Err(_) => {
            flags.push(format!("{name}: only {} dwells", d.len()));
            None
        }
    };
    let fits = [fit(&d0, "k12"), fit(&d1, "k21")];
    Ok(KineticsReport {
        levels,
        threshold,
        k12: fits[0].as_ref().map(|f| f.rate),
        k21: fits[1].as_ref().map(|f| f.rate),
        dwell_counts: [d0.len(), d1.len()],
        fits,
        flags,
    })
}
