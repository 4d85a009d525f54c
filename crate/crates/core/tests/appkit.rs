use ssdm_core::appkit::benchmark::{run_benchmark, BenchTrace, Method, MethodConfig};
use ssdm_core::appkit::{analyze_fret, denoise_long, dwell_times, io};
use ssdm_core::diffusion::{DiffusionSchedule, Sampler};
use ssdm_core::noisegen::NoiseKind;
use ssdm_core::sigsim::{
    generate_traces, levels_from_path, simulate_ctmc, BuiltinCatalog, Catalog, DatasetPlan,
    RateMatrix,
};

#[test]
fn ctmc_dwell_means_match_rates() {
    // sojourns shorter than one sample are invisible on the grid: they drop
    // out of the dwell list and merge their neighbours (~3% bias here)
    let m = RateMatrix::new(&[vec![-0.05, 0.05], vec![0.01, -0.01]]).unwrap();
    let path = simulate_ctmc(&m, 1_300_000, 1.0, 12).unwrap();
    let (d0, _) = dwell_times(&path.states, 1.0).unwrap();
    assert!(d0.len() >= 10_000, "{}", d0.len());
    let mean = d0.iter().sum::<f64>() / d0.len() as f64;
    assert!((mean - 20.0).abs() < 0.05 * 20.0, "{mean}");
}

#[test]
fn clean_fret_trace_recovers_rates() {
    let m = RateMatrix::new(&[vec![-0.05, 0.05], vec![0.05, -0.05]]).unwrap();
    let path = simulate_ctmc(&m, 100_000, 1.0, 3).unwrap();
    let clean = levels_from_path(&path, 2).unwrap();
    let y: Vec<f64> = clean.values.iter().map(|v| 0.25 + 0.45 * v).collect();
    let r = analyze_fret(&y, 0.01, None).unwrap();
    assert!((r.levels[0] - 0.25).abs() < 1e-12 && (r.levels[1] - 0.7).abs() < 1e-12);
    for k in [r.k12.unwrap(), r.k21.unwrap()] {
        assert!((k - 5.0).abs() < 0.15 * 5.0, "{k}");
    }
}

#[test]
fn long_denoise_preserves_length_and_is_reproducible() {
    let sched = DiffusionSchedule::default();
    let shrink = |x: &[f64], _t: usize| x.iter().map(|v| 0.1 * v).collect::<Vec<f64>>();
    let y: Vec<f64> = (0..2300)
        .map(|i| ((i / 100) % 2) as f64 * 3.0 + 10.0)
        .collect();
    let a = denoise_long(&y, &shrink, &sched, Some(5), true, Sampler::Ancestral, 4).unwrap();
    let b = denoise_long(&y, &shrink, &sched, Some(5), true, Sampler::Ancestral, 4).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.values.len(), y.len());
    assert_eq!(a.plan.starts, vec![0, 500, 1000, 1300]);
    assert!(a.normalization.is_some());
    assert!(denoise_long(&y[..999], &shrink, &sched, Some(5), true, Sampler::Mean, 4).is_err());
}

fn small_set() -> Vec<BenchTrace> {
    let cat = Catalog::builtin(BuiltinCatalog::Test);
    let plan = DatasetPlan {
        traces_per_matrix: 1,
        length: 1000,
        dt: 1.0,
        seed: 5,
        noise: Some((NoiseKind::White, vec![1.0, 3.0])),
    };
    let keep: Vec<(String, RateMatrix)> = [2, 3]
        .iter()
        .flat_map(|&k| cat.with_states(k).entries.into_iter().take(2))
        .collect();
    generate_traces(&Catalog { entries: keep }, &plan)
        .unwrap()
        .into_iter()
        .map(|g| BenchTrace::from_generated(g).unwrap())
        .collect()
}

#[test]
fn benchmark_emits_one_row_per_group() {
    let traces = small_set();
    assert_eq!(traces.len(), 8);
    let sched = DiffusionSchedule::default();
    let zero = |x: &[f64], _t: usize| vec![0.0; x.len()];
    let cfg = MethodConfig {
        t_start: Some(3),
        ..MethodConfig::default()
    };
    let methods = [Method::Raw, Method::Ssdm, Method::Lowpass, Method::Hmm];
    let res = run_benchmark(&traces, &methods, &cfg, Some((&zero, &sched))).unwrap();
    assert_eq!(res.rows.len(), 4 * 2 * 2);
    assert!(res.rows.iter().all(|r| r.n_traces == 2));
    assert_eq!(res.reports.len(), 4 * 8);
    assert_eq!(res.cutoffs.len(), 4);
    assert_eq!(res.examples.len(), 4);
    assert!(res.examples.iter().all(|e| e.outputs.len() == 4));
    assert!(res.row(Method::Hmm, 3, 1.0).is_some());
    assert!(res.row(Method::Hmm, 4, 1.0).is_none());

    let again = run_benchmark(&traces, &methods, &cfg, Some((&zero, &sched))).unwrap();
    assert_eq!(again, res);

    let dir = tempfile::tempdir().unwrap();
    res.write(dir.path()).unwrap();
    let text = std::fs::read_to_string(dir.path().join("benchmark.csv")).unwrap();
    assert_eq!(text.lines().count(), 1 + 16);
    assert!(text
        .starts_with("method,K,snr,mse_mean,f1_mean,score_mean_of_traces,score_pooled,n_traces"));
    for f in [
        "per_trace.csv",
        "score_vs_snr.csv",
        "lowpass_cutoffs.csv",
        "examples.csv",
    ] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let none: Option<(&fn(&[f64], usize) -> Vec<f64>, &DiffusionSchedule)> = None;
    assert!(run_benchmark(&traces, &[Method::Ssdm], &cfg, none).is_err());
}

#[test]
fn trace_csv_roundtrip_through_files() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("sub/trace.csv");
    let v = vec![0.5, -1.25, 3.0e-7];
    io::write_trace_csv(&p, &v).unwrap();
    assert_eq!(io::read_trace_csv(&p).unwrap(), v);
}
