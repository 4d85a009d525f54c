use std::fmt;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use log::info;
use serde::Serialize;
use serde_json::json;
use ssdm_core::appkit::benchmark::{run_benchmark, BenchTrace, Method, MethodConfig};
use ssdm_core::appkit::io::{read_trace_csv, write_json, write_trace_csv};
use ssdm_core::appkit::{analyze_fret, analyze_nanopore, denoise_long};
use ssdm_core::baselines::hmm::{
    baum_welch_fit, hmm_denoise, select_num_states, DEFAULT_CANDIDATES, DEFAULT_MAX_ITER,
    DEFAULT_TOL,
};
use ssdm_core::baselines::lowpass::{
    butterworth_lowpass, grid_search_cutoff, LabelledTrace, LowpassConfig, PhaseMode,
};
use ssdm_core::diffusion::{DiffusionSchedule, Sampler};
use ssdm_core::evalkit::{evaluate_with, ThresholdSet};
use ssdm_core::nnet::{NetConfig, UNet, UNetPredictor};
use ssdm_core::noisegen::{noise, snr_to_rms};
use ssdm_core::rng::derive_seed;
use ssdm_core::sigsim::{
    build_dataset, generate_traces, state_levels, BuiltinCatalog, Catalog, DatasetManifest,
    DatasetPlan,
};
use ssdm_core::trainer::{Checkpoint, EdgeMode, LossConfig, TrainConfig, Trainer};

use crate::repro::ReproRecord;
use crate::{
    BenchmarkArgs, CorruptArgs, DenoiseArgs, EvalArgs, FretArgs, GenerateArgs, HmmArgs,
    LowpassArgs, NanoporeArgs, TrainArgs,
};

/// Bad command-line input detected before reaching the library.
#[derive(Debug)]
pub struct InvalidInput(pub String);

impl fmt::Display for InvalidInput {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for InvalidInput {}

fn invalid(msg: impl Into<String>) -> anyhow::Error {
    InvalidInput(msg.into()).into()
}

fn load_catalog(spec: &str) -> Result<Catalog> {
    Ok(match spec {
        "train" => Catalog::builtin(BuiltinCatalog::Train),
        "test" => Catalog::builtin(BuiltinCatalog::Test),
        path => Catalog::load(Path::new(path))?,
    })
}

fn filter_states(catalog: Catalog, k: Option<usize>) -> Result<Catalog> {
    let c = match k {
        Some(k) => catalog.with_states(k),
        None => catalog,
    };
    if c.is_empty() {
        return Err(invalid(
            "catalog has no matrices with the requested state count",
        ));
    }
    Ok(c)
}

fn load_model(path: &Path) -> Result<(UNetPredictor, DiffusionSchedule)> {
    let ck = Checkpoint::load(path)?;
    let sched = ck.schedule()?;
    info!("loaded checkpoint {} (epoch {})", path.display(), ck.epoch);
    Ok((UNetPredictor::new(ck.params)?, sched))
}

pub fn generate(a: &GenerateArgs) -> Result<()> {
    let catalog = filter_states(load_catalog(&a.catalog)?, a.k)?;
    let per = a
        .traces_per_matrix
        .unwrap_or(if a.catalog == "train" { 300 } else { 20 });
    let plan = DatasetPlan {
        traces_per_matrix: per,
        length: a.length,
        dt: a.dt,
        seed: a.seed,
        noise: (!a.snr.is_empty()).then(|| (a.noise, a.snr.clone())),
    };
    let (manifest, _) = build_dataset(&catalog, &plan, &a.out)?;
    info!("wrote {manifest} to {}", a.out.display());
    let mut rec = ReproRecord::new("generate", a)?.seed("master", a.seed);
    rec.output(&a.out.join(DatasetManifest::FILE_NAME));
    rec.details = json!({ "traces": manifest.entries.len(), "matrices": catalog.len() });
    rec.write(&a.out)
}

pub fn corrupt(a: &CorruptArgs) -> Result<()> {
    let clean = read_trace_csv(&a.input)?;
    let rms = snr_to_rms(&state_levels(a.k), a.snr)?;
    let eps = noise(a.noise, clean.len(), rms, a.seed)?;
    let noisy: Vec<f64> = clean.iter().zip(&eps).map(|(x, e)| x + e).collect();
    write_trace_csv(&a.out, &noisy)?;
    let mut rec = ReproRecord::new("corrupt", a)?.seed("noise", a.seed);
    rec.input(&a.input)?;
    rec.output(&a.out);
    rec.details = json!({ "noise_rms": rms });
    rec.write(&a.out)
}

fn training_data(a: &TrainArgs) -> Result<Vec<Vec<f64>>> {
    if let Some(dir) = &a.data {
        let manifest = DatasetManifest::load(&dir.join(DatasetManifest::FILE_NAME))?;
        manifest.validate(dir)?;
        let mut files: Vec<&str> = manifest
            .entries
            .iter()
            .filter(|e| a.k.map_or(true, |k| e.k == k))
            .map(|e| e.clean_file.as_str())
            .collect();
        files.sort_unstable();
        files.dedup();
        return files
            .into_iter()
            .map(|f| read_trace_csv(&dir.join(f)).map_err(Into::into))
            .collect();
    }
    let catalog = filter_states(load_catalog(a.catalog.as_deref().unwrap_or("train"))?, a.k)?;
    let plan = DatasetPlan::clean(
        a.traces_per_matrix,
        NetConfig::default().input_len,
        derive_seed(a.seed, &[1]),
    );
    Ok(generate_traces(&catalog, &plan)?
        .into_iter()
        .map(|t| t.clean.values)
        .collect())
}

pub fn train(a: &TrainArgs) -> Result<()> {
    let edge_mode: EdgeMode = a.edge_mode.parse()?;
    let train = TrainConfig {
        epochs: a.epochs,
        batch: a.batch,
        lr0: a.lr0,
        lr_min: a.lr_min,
        weight_decay: a.weight_decay,
        seed: a.seed,
    };
    let loss = LossConfig {
        lambda_amp: a.lambda_amp,
        lambda_edge: a.lambda_edge,
        edge_mode,
    };
    let data = training_data(a)?;
    if data.is_empty() {
        return Err(invalid("no training traces"));
    }
    let start = a.checkpoint.as_deref().map(Checkpoint::load).transpose()?;
    let (net_cfg, sched) = match &start {
        Some(ck) => (ck.net_config().clone(), ck.schedule()?),
        None => (
            NetConfig::with_base(a.base_channels),
            DiffusionSchedule::default(),
        ),
    };
    let trainer = Trainer::new(UNet::new(net_cfg)?, sched, train, loss)?;
    info!("training on {} traces", data.len());
    let out = a.out.clone();
    let ck = trainer.fit(&data, start, |ck| {
        ck.save(&out)?;
        info!("epoch {} saved to {}", ck.epoch, out.display());
        Ok(())
    })?;
    let mut rec = ReproRecord::new("train", a)?.seed("train", a.seed);
    if let Some(dir) = &a.data {
        rec.input(&dir.join(DatasetManifest::FILE_NAME))?;
    }
    if let Some(p) = &a.checkpoint {
        rec.input(p)?;
    }
    rec.output(&a.out);
    rec.details = json!({
        "traces": data.len(),
        "epochs_completed": ck.epoch,
        "final_loss": ck.loss_history.last(),
    });
    rec.write(&a.out)
}

pub fn denoise(a: &DenoiseArgs) -> Result<()> {
    let y = read_trace_csv(&a.input)?;
    let (model, sched) = load_model(&a.checkpoint)?;
    let res = denoise_long(&y, &model, &sched, a.t_start, !a.raw, a.sampler, a.seed)?;
    write_trace_csv(&a.out, &res.values)?;
    let mut rec = ReproRecord::new("denoise", a)?.seed("reverse_chain", a.seed);
    rec.input(&a.checkpoint)?;
    rec.input(&a.input)?;
    rec.output(&a.out);
    rec.details = json!({
        "t_start": res.t_start,
        "normalization": res.normalization,
        "windows": res.plan.starts,
    });
    rec.write(&a.out)
}

pub fn eval(a: &EvalArgs) -> Result<()> {
    let pred = read_trace_csv(&a.pred)?;
    let gt = read_trace_csv(&a.gt)?;
    let id = a
        .pred
        .file_stem()
        .map_or_else(String::new, |s| s.to_string_lossy().into_owned());
    let report = evaluate_with(id, &pred, &gt, &ThresholdSet::for_states(a.k)?, a.tolerance)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    let mut rec = ReproRecord::new("eval", a)?;
    rec.input(&a.pred)?;
    rec.input(&a.gt)?;
    rec.details = serde_json::to_value(&report)?;
    match &a.out {
        Some(out) => {
            write_json(out, &report)?;
            rec.output(out);
            rec.write(out)
        }
        None => rec.write(&a.pred.with_extension("eval")),
    }
}

pub fn lowpass(a: &LowpassArgs) -> Result<()> {
    let y = read_trace_csv(&a.input)?;
    let mode = if a.causal {
        PhaseMode::Causal
    } else {
        PhaseMode::ZeroPhase
    };
    let mut rec = ReproRecord::new("baseline lowpass", a)?;
    rec.input(&a.input)?;
    let fc = match (a.cutoff, &a.gt) {
        (Some(fc), _) => fc,
        (None, Some(gt_path)) => {
            let gt = read_trace_csv(gt_path)?;
            rec.input(gt_path)?;
            let cfg = LowpassConfig {
                order: a.order,
                phase_mode: mode,
                ..LowpassConfig::default()
            };
            let k = a.k.ok_or_else(|| invalid("--gt requires --k"))?;
            let id = "input";
            let search = grid_search_cutoff(
                &[LabelledTrace {
                    id,
                    noisy: &y,
                    clean: &gt,
                    k,
                }],
                &cfg,
            )?;
            search.best_fc
        }
        (None, None) => return Err(invalid("either --cutoff or --gt with --k is required")),
    };
    let out = butterworth_lowpass(&y, fc, a.order, mode)?;
    write_trace_csv(&a.out, &out)?;
    rec.output(&a.out);
    rec.details = json!({ "cutoff": fc });
    rec.write(&a.out)
}

pub fn hmm(a: &HmmArgs) -> Result<()> {
    let y = read_trace_csv(&a.input)?;
    let (fit, table) = match a.k {
        Some(k) => (baum_welch_fit(&y, k, DEFAULT_MAX_ITER, DEFAULT_TOL)?, None),
        None => {
            let sel = select_num_states(&y, &DEFAULT_CANDIDATES)?;
            (sel.fit, Some(sel.table))
        }
    };
    let out = hmm_denoise(&y, &fit.model)?;
    write_trace_csv(&a.out, &out)?;
    let mut rec = ReproRecord::new("baseline hmm", a)?;
    rec.input(&a.input)?;
    rec.output(&a.out);
    rec.details = json!({
        "k": fit.model.num_states(),
        "loglik": fit.loglik,
        "converged": fit.converged,
        "model": fit.model,
        "bic": table,
    });
    rec.write(&a.out)
}

fn benchmark_traces(a: &BenchmarkArgs) -> Result<Vec<BenchTrace>> {
    let catalog = filter_states(load_catalog(&a.catalog)?, a.k)?;
    let plan = DatasetPlan {
        traces_per_matrix: a.traces_per_matrix,
        length: NetConfig::default().input_len,
        dt: 1.0,
        seed: a.seed,
        noise: Some((a.noise, a.snr.clone())),
    };
    generate_traces(&catalog, &plan)?
        .into_iter()
        .map(|g| BenchTrace::from_generated(g).map_err(Into::into))
        .collect()
}

pub fn benchmark(a: &BenchmarkArgs) -> Result<()> {
    if a.snr.is_empty() {
        return Err(invalid("no SNR levels"));
    }
    let methods = a
        .methods
        .iter()
        .map(|m| m.parse::<Method>())
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let traces = benchmark_traces(a)?;
    let cfg = MethodConfig {
        t_start: a.t_start,
        sampler: a.sampler,
        seed: a.seed,
        ..MethodConfig::default()
    };
    let mut rec = ReproRecord::new("benchmark", a)?.seed("master", a.seed);
    let model = match &a.checkpoint {
        Some(p) => {
            rec.input(p)?;
            Some(load_model(p)?)
        }
        None if methods.contains(&Method::Ssdm) => {
            return Err(invalid("method ssdm needs --checkpoint"))
        }
        None => None,
    };
    info!("benchmarking {} traces", traces.len());
    let res = run_benchmark(&traces, &methods, &cfg, model.as_ref().map(|(m, s)| (m, s)))?;
    res.write(&a.out)?;
    for row in &res.rows {
        println!(
            "{:8} K={} snr={:<5} mse={:.5} f1={:.3} score={:.3} n={}",
            row.method,
            row.k,
            row.snr,
            row.mse_mean,
            row.f1_mean,
            row.score_mean_of_traces,
            row.n_traces
        );
    }
    for name in [
        "benchmark.csv",
        "per_trace.csv",
        "score_vs_snr.csv",
        "lowpass_cutoffs.csv",
        "examples.csv",
    ] {
        rec.output(&a.out.join(name));
    }
    rec.details = json!({ "traces": traces.len(), "lowpass_cutoffs": res.cutoffs });
    rec.write(&a.out)
}

/// Optionally denoise an experimental trace before analysis.
fn maybe_denoise(
    y: Vec<f64>,
    checkpoint: Option<&Path>,
    t_start: Option<usize>,
    sampler: Sampler,
    seed: u64,
    rec: &mut ReproRecord,
) -> Result<(Vec<f64>, serde_json::Value)> {
    let Some(path) = checkpoint else {
        return Ok((y, serde_json::Value::Null));
    };
    rec.input(path)?;
    let (model, sched) = load_model(path)?;
    let res = denoise_long(&y, &model, &sched, t_start, true, sampler, seed)?;
    let info = json!({ "t_start": res.t_start, "normalization": res.normalization });
    Ok((res.values, info))
}

fn prepare_out(out: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    Ok(out.to_path_buf())
}

fn write_report<T: Serialize>(
    out: &Path,
    name: &str,
    report: &T,
    rec: &mut ReproRecord,
) -> Result<()> {
    let path = out.join(name);
    write_json(&path, report)?;
    rec.output(&path);
    Ok(())
}

pub fn fret(a: &FretArgs) -> Result<()> {
    let out = prepare_out(&a.out)?;
    let mut rec = ReproRecord::new("analyze fret", a)?.seed("reverse_chain", a.seed);
    rec.input(&a.input)?;
    let y = read_trace_csv(&a.input)?;
    let (y, denoise_info) = maybe_denoise(
        y,
        a.checkpoint.as_deref(),
        a.t_start,
        a.sampler,
        a.seed,
        &mut rec,
    )?;
    if a.checkpoint.is_some() {
        let p = out.join("denoised.csv");
        write_trace_csv(&p, &y)?;
        rec.output(&p);
    }
    let report = analyze_fret(&y, a.dt, a.threshold)?;
    write_report(&out, "kinetics.json", &report, &mut rec)?;
    println!(
        "levels {:?}, threshold {}, k12 {:?}, k21 {:?}, dwells {:?}",
        report.levels, report.threshold, report.k12, report.k21, report.dwell_counts
    );
    for flag in &report.flags {
        println!("flag: {flag}");
    }
    rec.details = json!({ "denoise": denoise_info, "k12": report.k12, "k21": report.k21 });
    rec.write(&out)
}

pub fn nanopore(a: &NanoporeArgs) -> Result<()> {
    let out = prepare_out(&a.out)?;
    let mut rec = ReproRecord::new("analyze nanopore", a)?.seed("reverse_chain", a.seed);
    rec.input(&a.input)?;
    let y = read_trace_csv(&a.input)?;
    let (y, denoise_info) = maybe_denoise(
        y,
        a.checkpoint.as_deref(),
        a.t_start,
        a.sampler,
        a.seed,
        &mut rec,
    )?;
    if a.checkpoint.is_some() {
        let p = out.join("denoised.csv");
        write_trace_csv(&p, &y)?;
        rec.output(&p);
    }
    let report = analyze_nanopore(&y, a.baseline_level, a.threshold, a.dt, a.min_duration)?;
    write_report(&out, "events.json", &report, &mut rec)?;
    println!(
        "{} events, mean amplitude {:?}, mean duration {:?}",
        report.n_events, report.mean_amplitude, report.mean_duration
    );
    rec.details = json!({ "denoise": denoise_info, "n_events": report.n_events, "baseline": report.baseline });
    rec.write(&out)
}
