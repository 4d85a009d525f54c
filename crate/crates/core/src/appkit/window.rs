use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::normalize::{denormalize, normalize_trace, NormalizationRecord};
use crate::diffusion::{
    denoise, estimate_noise_rms, match_timestep, DiffusionSchedule, NoisePredictor, Sampler,
};
use crate::error::{Error, Result};
use crate::rng::derive_seed;

pub const DEFAULT_WINDOW: usize = 1000;
pub const DEFAULT_OVERLAP: usize = 500;

/// Window start offsets for a trace; the last window is aligned to the end.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowPlan {
    pub len: usize,
    pub window: usize,
    pub starts: Vec<usize>,
}

impl WindowPlan {
    pub fn new(len: usize, window: usize, overlap: usize) -> Result<Self> {
        if window == 0 || overlap >= window {
            return Err(Error::invalid(format!(
                "need 0 <= overlap < window, got {overlap}, {window}"
            )));
        }
        if len < window {
            return Err(Error::invalid(format!(
                "trace of {len} samples is shorter than the {window}-sample window"
            )));
        }
        let step = window - overlap;
        let mut starts: Vec<usize> = (0..)
            .map(|i| i * step)
            .take_while(|s| s + window <= len)
            .collect();
        let last = *starts.last().expect("len >= window");
        if last + window < len {
            starts.push(len - window);
        }
        Ok(Self {
            len,
            window,
            starts,
        })
    }

    pub fn cut<'a>(&self, y: &'a [f64]) -> Vec<&'a [f64]> {
        self.starts
            .iter()
            .map(|&s| &y[s..s + self.window])
            .collect()
    }

    /// Blend window outputs back into one trace. Overlaps are cross-faded
    /// linearly from the earlier window to the later one.
    pub fn stitch(&self, windows: &[Vec<f64>]) -> Result<Vec<f64>> {
        if windows.len() != self.starts.len() {
            return Err(Error::LengthMismatch {
                expected: self.starts.len(),
                got: windows.len(),
            });
        }
        if let Some(w) = windows.iter().find(|w| w.len() != self.window) {
            return Err(Error::LengthMismatch {
                expected: self.window,
                got: w.len(),
            });
        }
        let mut out = Vec::with_capacity(self.len);
        for (&start, w) in self.starts.iter().zip(windows) {
            let covered = out.len();
            let shared = covered.saturating_sub(start);
            for (i, p) in (start..covered).enumerate() {
                let a = (i + 1) as f64 / (shared + 1) as f64;
                out[p] += a * (w[i] - out[p]);
            }
            out.extend_from_slice(&w[shared..]);
        }
        Ok(out)
    }
}

/// Cut `y` into `window`-sample pieces with the given overlap.
pub fn window_trace(y: &[f64], window: usize, overlap: usize) -> Result<(Vec<&[f64]>, WindowPlan)> {
    let plan = WindowPlan::new(y.len(), window, overlap)?;
    Ok((plan.cut(y), plan))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LongDenoise {
    pub values: Vec<f64>,
    pub normalization: Option<NormalizationRecord>,
    pub t_start: usize,
    pub plan: WindowPlan,
}

/// Denoise a trace of any length >= the model window: optional percentile
/// normalisation, one noise-matched start step for the whole trace, windowed
/// reverse chains, cross-fade stitching and rescaling.
pub fn denoise_long<P: NoisePredictor + Sync + ?Sized>(
    y: &[f64],
    model: &P,
    sched: &DiffusionSchedule,
    t_start: Option<usize>,
    normalize: bool,
    sampler: Sampler,
    seed: u64,
) -> Result<LongDenoise> {
    let window = model.input_len().unwrap_or(DEFAULT_WINDOW);
    let (u, rec) = if normalize {
        let (u, r) = normalize_trace(y)?;
        (u, Some(r))
    } else {
        (y.to_vec(), None)
    };
    let plan = WindowPlan::new(u.len(), window, window / 2)?;
    let t = match t_start {
        Some(t) => t,
        None => match_timestep(estimate_noise_rms(&u)?, sched),
    };
    let outputs = plan
        .cut(&u)
        .into_par_iter()
        .enumerate()
        .map(|(i, w)| {
            denoise(
                w,
                model,
                sched,
                Some(t),
                sampler,
                derive_seed(seed, &[i as u64]),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let stitched = plan.stitch(&outputs)?;
    let values = match &rec {
        Some(r) => denormalize(&stitched, r),
        None => stitched,
    };
    Ok(LongDenoise {
        values,
        normalization: rec,
        t_start: t,
        plan,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn plan_examples() {
        let p = WindowPlan::new(1000, 1000, 500).unwrap();
        assert_eq!(p.starts, vec![0]);
        let y: Vec<f64> = (0..1000).map(|i| i as f64).collect();
        assert_eq!(p.stitch(&[y.clone()]).unwrap(), y);
        assert_eq!(
            WindowPlan::new(1500, 1000, 500).unwrap().starts,
            vec![0, 500]
        );
        assert_eq!(
            WindowPlan::new(1700, 1000, 500).unwrap().starts,
            vec![0, 500, 700]
        );
        assert!(WindowPlan::new(999, 1000, 500).is_err());
        assert!(WindowPlan::new(2000, 1000, 1000).is_err());
    }

    #[test]
    fn crossfade_region() {
        let p = WindowPlan::new(1500, 1000, 500).unwrap();
        let out = p.stitch(&[vec![0.0; 1000], vec![1.0; 1000]]).unwrap();
        assert!(out[..500].iter().all(|&v| v == 0.0));
        assert!(out[1000..].iter().all(|&v| v == 1.0));
        assert!(out[500..1000].windows(2).all(|w| w[1] > w[0]));
        assert!(out[500] > 0.0 && out[999] < 1.0);
    }

    proptest! {
        #[test]
        fn constant_traces_stitch_exactly(len in 1000usize..4000, c in -5.0f64..5.0) {
            let y = vec![c; len];
            let (w, plan) = window_trace(&y, 1000, 500).unwrap();
            let owned: Vec<Vec<f64>> = w.iter().map(|s| s.to_vec()).collect();
            prop_assert_eq!(plan.stitch(&owned).unwrap(), y);
        }

        #[test]
        fn stitching_preserves_length_and_identity(y in proptest::collection::vec(-1.0f64..1.0, 100..700)) {
            let (w, plan) = window_trace(&y, 100, 50).unwrap();
            let owned: Vec<Vec<f64>> = w.iter().map(|s| s.to_vec()).collect();
            let out = plan.stitch(&owned).unwrap();
            prop_assert_eq!(out.len(), y.len());
            for (a, b) in out.iter().zip(&y) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
