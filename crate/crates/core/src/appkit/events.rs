//! Threshold-based event extraction for nanopore-style current traces.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_MIN_DURATION: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub start: usize,
    /// Exclusive end index.
    pub end: usize,
    /// Seconds.
    pub duration: f64,
    /// `|baseline - mean(event samples)|`, signal units.
    pub amplitude: f64,
}

/// Maximal runs on the event side of `threshold` (the side away from
/// `baseline`) lasting at least `min_duration` samples.
pub fn extract_events(
    trace: &[f64],
    baseline: f64,
    threshold: f64,
    dt: f64,
    min_duration: usize,
) -> Result<Vec<Event>> {
    if !baseline.is_finite() || !threshold.is_finite() || threshold == baseline {
        return Err(Error::invalid(format!(
            "threshold {threshold} must be finite and differ from baseline {baseline}"
        )));
    }
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::invalid(format!(
            "sample interval must be > 0, got {dt}"
        )));
    }
    if trace.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("trace contains non-finite values"));
    }
    let below = threshold < baseline;
    let inside = |v: f64| if below { v < threshold } else { v > threshold };
    let min_duration = min_duration.max(1);
    let mut events = Vec::new();
    let mut i = 0;
    while i < trace.len() {
        if !inside(trace[i]) {
            i += 1;
            continue;
        }
        let start = i;
        while i < trace.len() && inside(trace[i]) {
            i += 1;
        }
        let n = i - start;
        if n >= min_duration {
            let mean = trace[start..i].iter().sum::<f64>() / n as f64;
            events.push(Event {
                start,
                end: i,
                duration: n as f64 * dt,
                amplitude: (baseline - mean).abs(),
            });
        }
    }
    Ok(events)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventReport {
    pub baseline: f64,
    pub threshold: f64,
    pub dt: f64,
    pub min_duration: usize,
    pub n_events: usize,
    pub mean_amplitude: Option<f64>,
    pub mean_duration: Option<f64>,
    pub events: Vec<Event>,
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    })
}

/// Event table for a trace. The baseline defaults to the trace median.
pub fn analyze_nanopore(
    trace: &[f64],
    baseline: Option<f64>,
    threshold: f64,
    dt: f64,
    min_duration: usize,
) -> Result<EventReport> {
    let baseline = match baseline {
        Some(b) => b,
        None => median(trace).ok_or_else(|| Error::invalid("empty trace"))?,
    };
    let events = extract_events(trace, baseline, threshold, dt, min_duration)?;
    let n = events.len();
    let mean = |f: fn(&Event) -> f64| (n > 0).then(|| events.iter().map(f).sum::<f64>() / n as f64);
    Ok(EventReport {
        baseline,
        threshold,
        dt,
        min_duration,
        n_events: n,
        mean_amplitude: mean(|e| e.amplitude),
        mean_duration: mean(|e| e.duration),
        events,
    })
}
