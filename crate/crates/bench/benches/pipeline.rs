use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use ssdm_bench::{noisy_trace, symmetric_matrix};
use ssdm_core::baselines::hmm::{baum_welch_fit, hmm_forward_loglik};
use ssdm_core::baselines::lowpass::{butterworth_lowpass, PhaseMode};
use ssdm_core::evalkit::evaluate;
use ssdm_core::noisegen::{noise, NoiseKind};
use ssdm_core::sigsim::simulate_ctmc;

fn simulation(c: &mut Criterion) {
    let m = symmetric_matrix(4);
    c.bench_function("simulate_ctmc/1000", |b| {
        b.iter(|| simulate_ctmc(&m, 1000, 1.0, black_box(7)).unwrap())
    });
    let mut g = c.benchmark_group("noise/1000");
    for kind in [NoiseKind::White, NoiseKind::Pink] {
        g.bench_with_input(BenchmarkId::from_parameter(kind), &kind, |b, &kind| {
            b.iter(|| noise(kind, 1000, 0.1, black_box(3)).unwrap())
        });
    }
    g.finish();
}

fn baselines(c: &mut Criterion) {
    let (_, y) = noisy_trace(3, 1.0, 1000, 11);
    let mut g = c.benchmark_group("lowpass/1000");
    for mode in [PhaseMode::Causal, PhaseMode::ZeroPhase] {
        g.bench_with_input(
            BenchmarkId::from_parameter(format!("{mode:?}")),
            &mode,
            |b, &mode| b.iter(|| butterworth_lowpass(black_box(&y), 0.03, 4, mode).unwrap()),
        );
    }
    g.finish();

    let fit = baum_welch_fit(&y, 3, 200, 1e-6).unwrap();
    c.bench_function("hmm_forward/K3/1000", |b| {
        b.iter(|| hmm_forward_loglik(&fit.model, black_box(&y)).unwrap())
    });
    c.bench_function("baum_welch/K3/1000", |b| {
        b.iter(|| baum_welch_fit(black_box(&y), 3, 200, 1e-6).unwrap())
    });
}

fn scoring(c: &mut Criterion) {
    let (clean, y) = noisy_trace(4, 3.0, 1000, 5);
    c.bench_function("evaluate/K4/1000", |b| {
        b.iter(|| evaluate("b", black_box(&y), &clean, 4).unwrap())
    });
}

criterion_group!(benches, simulation, baselines, scoring);
criterion_main!(benches);
