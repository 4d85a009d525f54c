use criterion::{black_box, criterion_group, criterion_main, Criterion};
use ssdm_bench::noisy_trace;
use ssdm_core::diffusion::{denoise, DiffusionSchedule, Sampler};
use ssdm_core::nnet::{NetConfig, UNet, UNetPredictor};
use ssdm_core::trainer::{LossConfig, TrainConfig, Trainer};

fn network(c: &mut Criterion) {
    let net = UNet::new(NetConfig::default()).unwrap();
    let params = net.init_params::<f32>(1);
    let x: Vec<f32> = noisy_trace(2, 3.0, 1000, 1)
        .1
        .iter()
        .map(|&v| v as f32)
        .collect();

    let mut g = c.benchmark_group("unet_base32");
    g.sample_size(10);
    g.bench_function("forward", |b| {
        b.iter(|| net.forward(&params, black_box(&x), 100).unwrap())
    });

    let trainer = Trainer::new(
        net.clone(),
        DiffusionSchedule::default(),
        TrainConfig::default(),
        LossConfig::default(),
    )
    .unwrap();
    let x0 = noisy_trace(2, 3.0, 1000, 2).0;
    let mut grads = params.zeros_like();
    g.bench_function("train_step_batch1", |b| {
        b.iter(|| {
            trainer
                .batch_gradient(&params, &[(&x0, 0)], 0, &mut grads)
                .unwrap()
        })
    });

    let model = UNetPredictor::new(params.clone()).unwrap();
    let sched = DiffusionSchedule::default();
    let y = noisy_trace(2, 3.0, 1000, 3).1;
    g.bench_function("denoise_t29", |b| {
        b.iter(|| denoise(black_box(&y), &model, &sched, Some(29), Sampler::Mean, 0).unwrap())
    });
    g.finish();
}

criterion_group!(benches, network);
criterion_main!(benches);
