//! Trace scoring: MSE, threshold state assignment, tolerance-matched
//! transition F1 and the composite log score.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_TOLERANCE: usize = 2;
pub const F1_FLOOR: f64 = 1e-6;
pub const MSE_FLOOR: f64 = 1e-12;

/// Amplitude thresholds separating the states of a normalised `K`-state trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdSet {
    values: Vec<f64>,
}

impl ThresholdSet {
    /// Fixed sets for K = 2, 3, 4; level midpoints `(2i+1)/(2(K-1))` for larger K.
    pub fn for_states(k: usize) -> Result<Self> {
        let values = match k {
            2 => vec![0.5],
            3 => vec![0.25, 0.75],
            4 => vec![0.165, 0.5, 0.83],
            5..=6 => (0..k - 1)
                .map(|i| (2 * i + 1) as f64 / (2 * (k - 1)) as f64)
                .collect(),
            _ => return Err(Error::invalid(format!("no threshold set for K = {k}"))),
        };
        Ok(Self { values })
    }

    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("threshold set is empty"));
        }
        if values.iter().any(|v| !(*v > 0.0 && *v < 1.0)) {
            return Err(Error::invalid("thresholds must lie in (0, 1)"));
        }
        if values.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("thresholds must be strictly increasing"));
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn num_states(&self) -> usize {
        self.values.len() + 1
    }

    pub fn state_of(&self, v: f64) -> usize {
        self.values.iter().filter(|&&th| th < v).count()
    }
}

pub fn mse(x_hat: &[f64], x_gt: &[f64]) -> Result<f64> {
    if x_hat.len() != x_gt.len() {
        return Err(Error::LengthMismatch {
            expected: x_gt.len(),
            got: x_hat.len(),
        });
    }
    if x_gt.is_empty() {
        return Err(Error::invalid("mse of empty traces"));
    }
    Ok(x_hat
        .iter()
        .zip(x_gt)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / x_gt.len() as f64)
}

pub fn assign_states(trace: &[f64], thresholds: &ThresholdSet) -> Vec<usize> {
    trace.iter().map(|&v| thresholds.state_of(v)).collect()
}

/// Indices `n >= 1` where the state differs from the previous sample.
pub fn detect_transitions(states: &[usize]) -> Vec<usize> {
    states
        .windows(2)
        .enumerate()
        .filter(|(_, w)| w[0] != w[1])
        .map(|(i, _)| i + 1)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct MatchCounts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

fn check_sorted(name: &str, v: &[usize]) -> Result<()> {
    if v.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::invalid(format!(
            "{name} transitions must be sorted and duplicate-free"
        )));
    }
    Ok(())
}

/// One-to-one matching of transitions within `delta` samples, maximising the
/// number of matched pairs.
///
/// Every ground-truth index owns the window `[g - delta, g + delta]`; the
/// windows share one width, so taking the earliest free prediction for each
/// ground truth in sorted order yields a maximum matching.
pub fn match_transitions(gt: &[usize], pred: &[usize], delta: usize) -> Result<MatchCounts> {
    check_sorted("ground-truth", gt)?;
    check_sorted("predicted", pred)?;
    let mut tp = 0;
    let mut j = 0;
    for &g in gt {
        while j < pred.len() && pred[j] + delta < g {
            j += 1;
        }
        if j < pred.len() && pred[j] <= g + delta {
            tp += 1;
            j += 1;
        }
    }
    Ok(MatchCounts {
        tp,
        fp: pred.len() - tp,
        fn_: gt.len() - tp,
    })
}

/// `(precision, recall, f1)`, each 0 when its denominator is 0.
pub fn f1(counts: MatchCounts) -> (f64, f64, f64) {
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let p = ratio(counts.tp, counts.tp + counts.fp);
    let r = ratio(counts.tp, counts.tp + counts.fn_);
    let f = if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    };
    (p, r, f)
}

/// `ln(max(f1, 1e-6) / max(mse, 1e-12))` and whether a clamp was applied.
pub fn score(f1_value: f64, mse_value: f64) -> (f64, bool) {
    let clamped = f1_value < F1_FLOOR || mse_value < MSE_FLOOR;
    (
        (f1_value.max(F1_FLOOR) / mse_value.max(MSE_FLOOR)).ln(),
        clamped,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub id: String,
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snr: Option<f64>,
    pub mse: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub score: f64,
    pub clamped: bool,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

/// Score one denoised trace against its clean reference.
pub fn evaluate(
    id: impl Into<String>,
    x_hat: &[f64],
    x_gt: &[f64],
    k: usize,
) -> Result<EvalReport> {
    let th = ThresholdSet::for_states(k)?;
    evaluate_with(id, x_hat, x_gt, &th, DEFAULT_TOLERANCE)
}

pub fn evaluate_with(
    id: impl Into<String>,
    x_hat: &[f64],
    x_gt: &[f64],
    thresholds: &ThresholdSet,
    delta: usize,
) -> Result<EvalReport> {
    let m = mse(x_hat, x_gt)?;
    let gt = detect_transitions(&assign_states(x_gt, thresholds));
    let pred = detect_transitions(&assign_states(x_hat, thresholds));
    let counts = match_transitions(&gt, &pred, delta)?;
    let (precision, recall, f) = f1(counts);
    let (s, clamped) = score(f, m);
    Ok(EvalReport {
        id: id.into(),
        k: thresholds.num_states(),
        snr: None,
        mse: m,
        precision,
        recall,
        f1: f,
        score: s,
        clamped,
        tp: counts.tp,
        fp: counts.fp,
        fn_: counts.fn_,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetReport {
    pub n_traces: usize,
    pub mse_mean: f64,
    pub f1_mean: f64,
    /// Mean of per-trace scores (headline number).
    pub score_mean_of_traces: f64,
    /// `ln(mean F1 / mean MSE)` with the same clamps as the per-trace score.
    pub score_pooled: f64,
    pub traces: Vec<EvalReport>,
}

impl DatasetReport {
    pub fn from_reports(traces: Vec<EvalReport>) -> Result<Self> {
        if traces.is_empty() {
            return Err(Error::invalid("cannot aggregate an empty dataset"));
        }
        let n = traces.len() as f64;
        let mse_mean = traces.iter().map(|r| r.mse).sum::<f64>() / n;
        let f1_mean = traces.iter().map(|r| r.f1).sum::<f64>() / n;
        let score_mean_of_traces = traces.iter().map(|r| r.score).sum::<f64>() / n;
        let (score_pooled, _) = score(f1_mean, mse_mean);
        Ok(Self {
            n_traces: traces.len(),
            mse_mean,
            f1_mean,
            score_mean_of_traces,
            score_pooled,
            traces,
        })
    }

    /// Write the per-trace table as CSV.
    pub fn write_csv<W: std::io::Write>(&self, method: &str, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let io = |e: csv::Error| Error::Numerical(format!("csv write failed: {e}"));
        w.write_record([
            "method",
            "id",
            "K",
            "snr",
            "mse",
            "precision",
            "recall",
            "f1",
            "score",
            "clamped",
        ])
        .map_err(io)?;
        for r in &self.traces {
            w.write_record([
                method.to_string(),
                r.id.clone(),
                r.k.to_string(),
                r.snr.map(|s| s.to_string()).unwrap_or_default(),
                r.mse.to_string(),
                r.precision.to_string(),
                r.recall.to_string(),
                r.f1.to_string(),
                r.score.to_string(),
                r.clamped.to_string(),
            ])
            .map_err(io)?;
        }
        w.flush()
            .map_err(|e| Error::Numerical(format!("csv write failed: {e}")))
    }
}

impl fmt::Display for DatasetReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "n={} mse={:.6} f1={:.4} score(mean of traces)={:.4} score(pooled)={:.4}",
            self.n_traces,
            self.mse_mean,
            self.f1_mean,
            self.score_mean_of_traces,
            self.score_pooled
        )
    }
}

/// Score `(id, x_hat, x_gt, K)` tuples and aggregate them.
pub fn evaluate_dataset<'a, I>(pairs: I) -> Result<DatasetReport>
where
    I: IntoIterator<Item = (&'a str, &'a [f64], &'a [f64], usize)>,
{
    let reports = pairs
        .into_iter()
        .map(|(id, x_hat, x_gt, k)| evaluate(id, x_hat, x_gt, k))
        .collect::<Result<Vec<_>>>()?;
    DatasetReport::from_reports(reports)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Size of the largest one-to-one matching, by exhaustive search.
    fn brute_force(gt: &[usize], pred: &[usize], delta: usize) -> usize {
        fn go(gt: &[usize], pred: &[usize], used: &mut Vec<bool>, delta: usize) -> usize {
            let Some((&g, rest)) = gt.split_first() else {
                return 0;
            };
            let mut best = go(rest, pred, used, delta);
            for (j, &p) in pred.iter().enumerate() {
                if !used[j] && g.abs_diff(p) <= delta {
                    used[j] = true;
                    best = best.max(1 + go(rest, pred, used, delta));
                    used[j] = false;
                }
            }
            best
        }
        go(gt, pred, &mut vec![false; pred.len()], delta)
    }

    #[test]
    fn mse_examples() {
        assert_eq!(mse(&[0.3, 0.4], &[0.3, 0.4]).unwrap(), 0.0);
        let a = [0.2, 0.5, 0.9];
        let b: Vec<f64> = a.iter().map(|v| v + 0.1).collect();
        assert!((mse(&b, &a).unwrap() - 0.01).abs() < 1e-15);
        assert_eq!(mse(&[0.0, 1.0], &[1.0, 1.0]).unwrap(), 0.5);
        assert!(mse(&[0.0], &[0.0, 1.0]).is_err());
        assert!(mse(&[], &[]).is_err());
    }

    #[test]
    fn thresholds() {
        assert_eq!(ThresholdSet::for_states(2).unwrap().state_of(0.7), 1);
        assert_eq!(ThresholdSet::for_states(3).unwrap().state_of(0.5), 1);
        assert_eq!(ThresholdSet::for_states(4).unwrap().state_of(0.9), 3);
        assert_eq!(ThresholdSet::for_states(2).unwrap().state_of(0.5), 0);
        assert!(ThresholdSet::for_states(1).is_err());
        assert!(ThresholdSet::new(vec![0.5, 0.4]).is_err());
        assert!(ThresholdSet::new(vec![0.0]).is_err());
        for k in 2..=6 {
            let t = ThresholdSet::for_states(k).unwrap();
            assert!(ThresholdSet::new(t.values().to_vec()).is_ok());
        }
    }

    #[test]
    fn transitions() {
        assert!(detect_transitions(&[1, 1, 1]).is_empty());
        assert_eq!(detect_transitions(&[0, 0, 1, 1, 0]), vec![2, 4]);
        assert_eq!(detect_transitions(&[0, 1, 0, 1]), vec![1, 2, 3]);
    }

    #[test]
    fn matching_examples() {
        let m = |g: &[usize], p: &[usize]| {
            let c = match_transitions(g, p, 2).unwrap();
            (c.tp, c.fp, c.fn_)
        };
        assert_eq!(m(&[100, 200], &[100, 200]), (2, 0, 0));
        assert_eq!(m(&[100, 200], &[101, 250]), (1, 1, 1));
        assert_eq!(m(&[100], &[99, 101]), (1, 1, 0));
        // distance-first greedy would take (5,5) and stop at one pair
        assert_eq!(m(&[3, 5], &[5, 7]), (2, 0, 0));
        assert!(match_transitions(&[5, 3], &[], 2).is_err());
        assert!(match_transitions(&[], &[4, 4], 2).is_err());
    }

    #[test]
    fn f1_and_score_examples() {
        let c = |tp, fp, fn_| MatchCounts { tp, fp, fn_ };
        assert_eq!(f1(c(2, 0, 0)), (1.0, 1.0, 1.0));
        assert_eq!(f1(c(1, 1, 1)), (0.5, 0.5, 0.5));
        assert_eq!(f1(c(0, 0, 3)), (0.0, 0.0, 0.0));
        assert_eq!(f1(c(0, 0, 0)), (0.0, 0.0, 0.0));
        assert_eq!(score(1.0, 1.0), (0.0, false));
        assert!((score(0.5, 0.05).0 - 10f64.ln()).abs() < 1e-12);
        let (s, clamped) = score(0.0, 0.01);
        assert!(clamped && (s - (1e-6f64 / 0.01).ln()).abs() < 1e-12);
    }

    #[test]
    fn dataset_aggregates() {
        let x = vec![0.0, 0.0, 1.0, 1.0];
        let perfect = evaluate_dataset([("a", &x[..], &x[..], 2)]).unwrap();
        assert!((perfect.score_mean_of_traces - 1e12f64.ln()).abs() < 1e-9);
        assert!((perfect.score_pooled - 1e12f64.ln()).abs() < 1e-9);
        assert!(perfect.traces[0].clamped);

        let mk = |f1: f64, mse: f64| EvalReport {
            id: String::new(),
            k: 2,
            snr: None,
            mse,
            precision: f1,
            recall: f1,
            f1,
            score: score(f1, mse).0,
            clamped: false,
            tp: 0,
            fp: 0,
            fn_: 0,
        };
        let d = DatasetReport::from_reports(vec![mk(1.0, 0.01), mk(1.0, 0.0001)]).unwrap();
        assert!((d.score_mean_of_traces - 1000f64.ln()).abs() < 1e-12);
        assert!((d.score_pooled - (1.0f64 / 0.00505).ln()).abs() < 1e-12);
        let single = DatasetReport::from_reports(vec![mk(0.8, 0.02)]).unwrap();
        assert!((single.score_mean_of_traces - single.score_pooled).abs() < 1e-12);
        assert!(DatasetReport::from_reports(vec![]).is_err());
    }

    fn sorted_set(max_len: usize) -> impl Strategy<Value = Vec<usize>> {
        proptest::collection::btree_set(0usize..60, 0..=max_len)
            .prop_map(|s| s.into_iter().collect())
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(300))]

        #[test]
        fn matching_is_maximum(gt in sorted_set(10), pred in sorted_set(10), delta in 0usize..4) {
            let c = match_transitions(&gt, &pred, delta).unwrap();
            prop_assert_eq!(c.tp, brute_force(&gt, &pred, delta));
            prop_assert_eq!(c.tp + c.fp, pred.len());
            prop_assert_eq!(c.tp + c.fn_, gt.len());
        }

        #[test]
        fn matching_is_shift_invariant(gt in sorted_set(10), pred in sorted_set(10), off in 0usize..1000) {
            let s = |v: &[usize]| v.iter().map(|x| x + off).collect::<Vec<_>>();
            prop_assert_eq!(
                match_transitions(&gt, &pred, 2).unwrap(),
                match_transitions(&s(&gt), &s(&pred), 2).unwrap()
            );
        }

        #[test]
        fn mse_symmetry_and_translation(
            a in proptest::collection::vec(-10.0f64..10.0, 1..50),
            c in -5.0f64..5.0,
        ) {
            let b: Vec<f64> = a.iter().rev().copied().collect();
            let ab = mse(&a, &b).unwrap();
            prop_assert_eq!(ab, mse(&b, &a).unwrap());
            let ac: Vec<f64> = a.iter().map(|v| v + c).collect();
            let bc: Vec<f64> = b.iter().map(|v| v + c).collect();
            prop_assert!((mse(&ac, &bc).unwrap() - ab).abs() <= 1e-9 * (1.0 + ab));
        }

        #[test]
        fn score_monotone(f in 0.01f64..0.99, m in 1e-6f64..1.0, df in 1e-4f64..0.01, dm in 1e-7f64..1e-3) {
            prop_assert!(score(f + df, m).0 > score(f, m).0);
            prop_assert!(score(f, m + dm).0 < score(f, m).0);
        }
    }
}
