//! Shared fixtures for the ssdm benchmarks.

use ssdm_core::noisegen::{noise, snr_to_rms, NoiseKind};
use ssdm_core::sigsim::{levels_from_path, simulate_ctmc, state_levels, RateMatrix};

/// Symmetric `k`-state matrix with escape rate 0.05 per sample.
pub fn symmetric_matrix(k: usize) -> RateMatrix {
    let off = 0.05 / (k - 1) as f64;
    let rows: Vec<Vec<f64>> = (0..k)
        .map(|i| (0..k).map(|j| if i == j { -0.05 } else { off }).collect())
        .collect();
    RateMatrix::new(&rows).expect("valid matrix")
}

/// Clean and noisy copies of one simulated trace.
pub fn noisy_trace(k: usize, snr: f64, n: usize, seed: u64) -> (Vec<f64>, Vec<f64>) {
    let path = simulate_ctmc(&symmetric_matrix(k), n, 1.0, seed).expect("simulate");
    let clean = levels_from_path(&path, k).expect("levels").values;
    let rms = snr_to_rms(&state_levels(k), snr).expect("rms");
    let eps = noise(NoiseKind::White, n, rms, seed ^ 0x5eed).expect("noise");
    let noisy = clean.iter().zip(&eps).map(|(x, e)| x + e).collect();
    (clean, noisy)
}
