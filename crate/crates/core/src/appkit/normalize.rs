use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const LOW_PERCENTILE: f64 = 1.0;
pub const HIGH_PERCENTILE: f64 = 99.0;
pub const CLIP_LOW: f64 = -0.5;
pub const CLIP_HIGH: f64 = 1.5;

/// Affine map between signal units and the unit interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizationRecord {
    pub low: f64,
    pub high: f64,
}

impl NormalizationRecord {
    pub fn new(low: f64, high: f64) -> Result<Self> {
        if !(high > low) || !low.is_finite() || !high.is_finite() {
            return Err(Error::invalid(format!(
                "normalisation anchors need low < high, got {low}, {high}"
            )));
        }
        Ok(Self { low, high })
    }

    pub fn span(&self) -> f64 {
        self.high - self.low
    }

    pub fn forward(&self, v: f64) -> f64 {
        (v - self.low) / self.span()
    }

    pub fn inverse(&self, u: f64) -> f64 {
        self.low + u * self.span()
    }
}

/// Percentile with linear interpolation between order statistics.
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    let pos = p / 100.0 * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Map `y` to roughly `[0, 1]` using its 1st and 99th percentiles, clipping
/// to `[-0.5, 1.5]`.
pub fn normalize_trace(y: &[f64]) -> Result<(Vec<f64>, NormalizationRecord)> {
    if y.len() < 10 {
        return Err(Error::invalid(format!(
            "normalisation needs >= 10 samples, got {}",
            y.len()
        )));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("trace contains non-finite values"));
    }
    let mut sorted = y.to_vec();
    sorted.sort_by(f64::total_cmp);
    let low = percentile(&sorted, LOW_PERCENTILE);
    let high = percentile(&sorted, HIGH_PERCENTILE);
    if !(high > low) {
        return Err(Error::invalid(
            "trace is constant between its 1st and 99th percentiles",
        ));
    }
    let rec = NormalizationRecord { low, high };
    Ok((apply(y, &rec), rec))
}

/// Normalise with an existing record.
pub fn apply(y: &[f64], rec: &NormalizationRecord) -> Vec<f64> {
    y.iter()
        .map(|&v| rec.forward(v).clamp(CLIP_LOW, CLIP_HIGH))
        .collect()
}

pub fn denormalize(u: &[f64], rec: &NormalizationRecord) -> Vec<f64> {
    u.iter().map(|&v| rec.inverse(v)).collect()
}
