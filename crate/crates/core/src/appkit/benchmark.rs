//! Method comparison over a labelled synthetic test set.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::window::denoise_long;
use crate::baselines::hmm::{hmm_denoise, select_num_states, DEFAULT_CANDIDATES};
use crate::baselines::lowpass::{
    butterworth_lowpass, grid_search_cutoff, LabelledTrace, LowpassConfig,
};
use crate::diffusion::{DiffusionSchedule, NoisePredictor, Sampler};
use crate::error::{Error, Result};
use crate::evalkit::{evaluate, DatasetReport, EvalReport};
use crate::rng::derive_seed;
use crate::sigsim::GeneratedTrace;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// The noisy input itself, as a reference.
    Raw,
    Ssdm,
    Lowpass,
    Hmm,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Raw => "raw",
            Method::Ssdm => "ssdm",
            Method::Lowpass => "lowpass",
            Method::Hmm => "hmm",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "raw" | "noisy" => Ok(Method::Raw),
            "ssdm" => Ok(Method::Ssdm),
            "lowpass" => Ok(Method::Lowpass),
            "hmm" => Ok(Method::Hmm),
            other => Err(Error::invalid(format!("unknown method {other:?}"))),
        }
    }
}

/// A noisy trace with its clean reference.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchTrace {
    pub id: String,
    pub k: usize,
    pub snr: f64,
    pub seed: u64,
    pub clean: Vec<f64>,
    pub noisy: Vec<f64>,
}

impl BenchTrace {
    pub fn from_generated(g: GeneratedTrace) -> Result<Self> {
        let noisy = g
            .noisy
            .ok_or_else(|| Error::invalid(format!("trace {} has no noisy copy", g.id)))?;
        Ok(Self {
            id: g.id,
            k: g.clean.num_states,
            snr: noisy.spec.snr,
            seed: g.seed,
            clean: g.clean.values,
            noisy: noisy.values,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodConfig {
    pub lowpass: LowpassConfig,
    pub hmm_candidates: Vec<usize>,
    /// Fixed reverse-chain start; noise-matched when `None`.
    pub t_start: Option<usize>,
    pub sampler: Sampler,
    pub seed: u64,
}

impl Default for MethodConfig {
    fn default() -> Self {
        Self {
            lowpass: LowpassConfig::default(),
            hmm_candidates: DEFAULT_CANDIDATES.to_vec(),
            t_start: None,
            sampler: Sampler::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRow {
    pub method: Method,
    #[serde(rename = "K")]
    pub k: usize,
    pub snr: f64,
    pub mse_mean: f64,
    pub f1_mean: f64,
    pub score_mean_of_traces: f64,
    pub score_pooled: f64,
    pub n_traces: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CutoffChoice {
    pub snr: f64,
    #[serde(rename = "K")]
    pub k: usize,
    pub fc: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkResult {
    /// Per-trace reports, grouped by method in run order.
    pub reports: Vec<(Method, EvalReport)>,
    /// One row per (method, SNR, K).
    pub rows: Vec<BenchmarkRow>,
    /// Low-pass cutoff selected for each (SNR, K) group.
    pub cutoffs: Vec<CutoffChoice>,
    /// Outputs for the first trace of each (SNR, K) group.
    pub examples: Vec<Example>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub id: String,
    pub k: usize,
    pub snr: f64,
    pub clean: Vec<f64>,
    pub noisy: Vec<f64>,
    pub outputs: Vec<(Method, Vec<f64>)>,
}

type GroupKey = (u64, usize);

fn group_key(t: &BenchTrace) -> GroupKey {
    (t.snr.to_bits(), t.k)
}

fn groups(traces: &[BenchTrace]) -> BTreeMap<(usize, u64), Vec<usize>> {
    // ordered by K then SNR bits; SNRs are positive so bit order is numeric order
    let mut g: BTreeMap<(usize, u64), Vec<usize>> = BTreeMap::new();
    for (i, t) in traces.iter().enumerate() {
        let (s, k) = group_key(t);
        g.entry((k, s)).or_default().push(i);
    }
    g
}

/// Low-pass output with the cutoff tuned per (SNR, K) group on that group.
fn run_lowpass(
    traces: &[BenchTrace],
    cfg: &LowpassConfig,
) -> Result<(Vec<Vec<f64>>, Vec<CutoffChoice>)> {
    let mut out = vec![Vec::new(); traces.len()];
    let mut choices = Vec::new();
    for ((k, snr_bits), idx) in groups(traces) {
        let labelled: Vec<LabelledTrace> = idx
            .iter()
            .map(|&i| LabelledTrace {
                id: &traces[i].id,
                noisy: &traces[i].noisy,
                clean: &traces[i].clean,
                k,
            })
            .collect();
        let search = grid_search_cutoff(&labelled, cfg)?;
        let snr = f64::from_bits(snr_bits);
        log::info!("lowpass K={k} snr={snr}: fc={:.4}", search.best_fc);
        choices.push(CutoffChoice {
            snr,
            k,
            fc: search.best_fc,
        });
        for &i in &idx {
            out[i] =
                butterworth_lowpass(&traces[i].noisy, search.best_fc, cfg.order, cfg.phase_mode)?;
        }
    }
    Ok((out, choices))
}

fn run_hmm(traces: &[BenchTrace], candidates: &[usize]) -> Result<Vec<Vec<f64>>> {
    traces
        .par_iter()
        .map(|t| {
            let sel = select_num_states(&t.noisy, candidates)?;
            hmm_denoise(&t.noisy, &sel.fit.model)
        })
        .collect()
}

fn run_ssdm<P: NoisePredictor + Sync + ?Sized>(
    traces: &[BenchTrace],
    model: &P,
    sched: &DiffusionSchedule,
    cfg: &MethodConfig,
) -> Result<Vec<Vec<f64>>> {
    traces
        .par_iter()
        .enumerate()
        .map(|(i, t)| {
            let seed = derive_seed(cfg.seed, &[t.seed, i as u64]);
            let r = denoise_long(
                &t.noisy,
                model,
                sched,
                cfg.t_start,
                false,
                cfg.sampler,
                seed,
            )?;
            log::debug!("ssdm {} t*={}", t.id, r.t_start);
            Ok(r.values)
        })
        .collect()
}

/// Denoise every trace with one method.
pub fn run_method<P: NoisePredictor + Sync + ?Sized>(
    method: Method,
    traces: &[BenchTrace],
    cfg: &MethodConfig,
    model: Option<(&P, &DiffusionSchedule)>,
) -> Result<(Vec<Vec<f64>>, Vec<CutoffChoice>)> {
    match method {
        Method::Raw => Ok((traces.iter().map(|t| t.noisy.clone()).collect(), Vec::new())),
        Method::Lowpass => run_lowpass(traces, &cfg.lowpass),
        Method::Hmm => Ok((run_hmm(traces, &cfg.hmm_candidates)?, Vec::new())),
        Method::Ssdm => {
            let (m, s) = model
                .ok_or_else(|| Error::invalid("the ssdm method needs a trained checkpoint"))?;
            Ok((run_ssdm(traces, m, s, cfg)?, Vec::new()))
        }
    }
}

pub fn evaluate_outputs(traces: &[BenchTrace], outputs: &[Vec<f64>]) -> Result<Vec<EvalReport>> {
    traces
        .iter()
        .zip(outputs)
        .map(|(t, y)| {
            let mut r = evaluate(t.id.clone(), y, &t.clean, t.k)?;
            r.snr = Some(t.snr);
            Ok(r)
        })
        .collect()
}

/// Run each method over the test set and aggregate per (method, SNR, K).
pub fn run_benchmark<P: NoisePredictor + Sync + ?Sized>(
    traces: &[BenchTrace],
    methods: &[Method],
    cfg: &MethodConfig,
    model: Option<(&P, &DiffusionSchedule)>,
) -> Result<BenchmarkResult> {
    if traces.is_empty() {
        return Err(Error::invalid("benchmark set is empty"));
    }
    if methods.is_empty() {
        return Err(Error::invalid("no methods selected"));
    }
    let grouped = groups(traces);
    let mut examples: Vec<Example> = grouped
        .iter()
        .map(|(_, idx)| {
            let t = &traces[idx[0]];
            Example {
                id: t.id.clone(),
                k: t.k,
                snr: t.snr,
                clean: t.clean.clone(),
                noisy: t.noisy.clone(),
                outputs: Vec::new(),
            }
        })
        .collect();
    let mut reports = Vec::new();
    let mut rows = Vec::new();
    let mut cutoffs = Vec::new();
    for &method in methods {
        log::info!("running {method} on {} traces", traces.len());
        let (outputs, choices) = run_method(method, traces, cfg, model)?;
        cutoffs.extend(choices);
        let evals = evaluate_outputs(traces, &outputs)?;
        for (ex, idx) in examples.iter_mut().zip(grouped.values()) {
            ex.outputs.push((method, outputs[idx[0]].clone()));
        }
        for ((k, snr_bits), idx) in &grouped {
            let agg = DatasetReport::from_reports(idx.iter().map(|&i| evals[i].clone()).collect())?;
            rows.push(BenchmarkRow {
                method,
                k: *k,
                snr: f64::from_bits(*snr_bits),
                mse_mean: agg.mse_mean,
                f1_mean: agg.f1_mean,
                score_mean_of_traces: agg.score_mean_of_traces,
                score_pooled: agg.score_pooled,
                n_traces: agg.n_traces,
            });
        }
        reports.extend(evals.into_iter().map(|r| (method, r)));
    }
    Ok(BenchmarkResult {
        reports,
        rows,
        cutoffs,
        examples,
    })
}

fn csv_err(e: csv::Error) -> Error {
    Error::Numerical(format!("csv write failed: {e}"))
}

fn writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    csv::Writer::from_path(path).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })
}

impl BenchmarkResult {
    pub fn row(&self, method: Method, k: usize, snr: f64) -> Option<&BenchmarkRow> {
        self.rows
            .iter()
            .find(|r| r.method == method && r.k == k && r.snr == snr)
    }

    /// Mean per-trace score of `method` at `snr` over every K.
    pub fn score_at(&self, method: Method, snr: f64) -> Option<f64> {
        let s: Vec<f64> = self
            .reports
            .iter()
            .filter(|(m, r)| *m == method && r.snr == Some(snr))
            .map(|(_, r)| r.score)
            .collect();
        (!s.is_empty()).then(|| s.iter().sum::<f64>() / s.len() as f64)
    }

    /// Write `benchmark.csv`, `per_trace.csv`, `score_vs_snr.csv`,
    /// `lowpass_cutoffs.csv` and `examples.csv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

        let mut w = writer(&dir.join("benchmark.csv"))?;
        w.write_record([
            "method",
            "K",
            "snr",
            "mse_mean",
            "f1_mean",
            "score_mean_of_traces",
            "score_pooled",
            "n_traces",
        ])
        .map_err(csv_err)?;
        for r in &self.rows {
            w.write_record([
                r.method.to_string(),
                r.k.to_string(),
                r.snr.to_string(),
                r.mse_mean.to_string(),
                r.f1_mean.to_string(),
                r.score_mean_of_traces.to_string(),
                r.score_pooled.to_string(),
                r.n_traces.to_string(),
            ])
            .map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::io(dir, e))?;

        let file =
            std::fs::File::create(dir.join("per_trace.csv")).map_err(|e| Error::io(dir, e))?;
        let mut w = csv::Writer::from_writer(file);
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
        .map_err(csv_err)?;
        for (m, r) in &self.reports {
            w.write_record([
                m.to_string(),
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
            .map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::io(dir, e))?;

        let mut w = writer(&dir.join("score_vs_snr.csv"))?;
        w.write_record(["method", "snr", "score_mean_of_traces"])
            .map_err(csv_err)?;
        let mut seen = Vec::new();
        for r in &self.rows {
            if seen.contains(&(r.method, r.snr.to_bits())) {
                continue;
            }
            seen.push((r.method, r.snr.to_bits()));
            let s = self.score_at(r.method, r.snr).expect("row implies reports");
            w.write_record([r.method.to_string(), r.snr.to_string(), s.to_string()])
                .map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::io(dir, e))?;

        let mut w = writer(&dir.join("lowpass_cutoffs.csv"))?;
        w.write_record(["K", "snr", "fc"]).map_err(csv_err)?;
        for c in &self.cutoffs {
            w.write_record([c.k.to_string(), c.snr.to_string(), c.fc.to_string()])
                .map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::io(dir, e))?;

        let mut w = writer(&dir.join("examples.csv"))?;
        w.write_record(["id", "K", "snr", "index", "series", "value"])
            .map_err(csv_err)?;
        for ex in &self.examples {
            let series = [("clean", &ex.clean), ("noisy", &ex.noisy)]
                .into_iter()
                .chain(ex.outputs.iter().map(|(m, v)| (m.name(), v)));
            for (name, values) in series {
                for (i, v) in values.iter().enumerate() {
                    w.write_record([
                        ex.id.clone(),
                        ex.k.to_string(),
                        ex.snr.to_string(),
                        i.to_string(),
                        name.to_string(),
                        v.to_string(),
                    ])
                    .map_err(csv_err)?;
                }
            }
        }
        w.flush().map_err(|e| Error::io(dir, e))?;
        Ok(())
    }
}
