use rand::Rng;
use rand_distr::StandardNormal;
use ssdm_core::nnet::{sinusoid, NetConfig, ParamStore, UNet};
use ssdm_core::rng::rng_from_seed;

fn gaussian(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = rng_from_seed(seed);
    (0..n)
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect()
}

fn conv(cin: usize, cout: usize, k: usize) -> usize {
    cout * cin * k + cout
}

fn lin(i: usize, o: usize) -> usize {
    o * i + o
}

fn res(cin: usize, cout: usize, emb: usize) -> usize {
    let skip = if cin != cout { conv(cin, cout, 1) } else { 0 };
    conv(cin, cout, 3) + 2 * cout + lin(emb, 2 * cout) + conv(cout, cout, 3) + skip
}

fn attn(c: usize) -> usize {
    2 * c + conv(c, 3 * c, 1) + conv(c, c, 1)
}

#[test]
fn tiny_parameter_count_matches_inventory() {
    let e = 32;
    let expected = lin(8, e)
        + lin(e, e)
        + conv(1, 8, 3)
        + res(8, 8, e)
        + attn(8)
        + conv(8, 8, 3)
        + res(8, 16, e)
        + attn(16)
        + conv(16, 16, 3)
        + res(16, 16, e)
        + attn(16)
        + conv(16, 16, 3)
        + res(24, 8, e)
        + attn(8)
        + conv(16, 16, 3)
        + res(32, 16, e)
        + attn(16)
        + conv(8, 1, 3);
    let net = UNet::new(NetConfig::tiny()).unwrap();
    assert_eq!(net.layout().num_values(), expected);
}

#[test]
fn init_is_deterministic_and_projections_are_zero() {
    let net = UNet::new(NetConfig::tiny()).unwrap();
    let a: ParamStore<f32> = net.init_params(11);
    let b: ParamStore<f32> = net.init_params(11);
    let c: ParamStore<f32> = net.init_params(12);
    assert_eq!(a, b);
    assert_ne!(a, c);
    let mut seen = 0;
    for (name, _, vals) in a.tensors() {
        if name.contains(".attn.proj.") {
            seen += 1;
            assert!(vals.iter().all(|&v| v == 0.0), "{name} not zero");
        }
        if name.ends_with("norm.weight") {
            assert!(vals.iter().all(|&v| v == 1.0));
        }
    }
    assert_eq!(seen, 2 * 5);
}

#[test]
fn output_shape_and_purity() {
    for (input_len, padded_len) in [(1000, 1024), (512, 512)] {
        let cfg = NetConfig {
            input_len,
            padded_len,
            ..NetConfig::with_base(16)
        };
        let net = UNet::new(cfg).unwrap();
        let p: ParamStore<f32> = net.init_params(1);
        let x: Vec<f32> = gaussian(input_len, 2)
            .into_iter()
            .map(|v| v as f32)
            .collect();
        let y1 = net.forward(&p, &x, 500).unwrap();
        let y2 = net.forward(&p, &x, 500).unwrap();
        assert_eq!(y1.len(), input_len);
        assert!(y1.iter().zip(&y2).all(|(a, b)| a.to_bits() == b.to_bits()));
    }
}

#[test]
fn forward_rejects_bad_inputs() {
    let net = UNet::new(NetConfig::tiny()).unwrap();
    let p: ParamStore<f64> = net.init_params(1);
    assert!(net.forward(&p, &[0.0; 63], 1).is_err());
    assert!(net.forward(&p, &[0.0; 64], 1001).is_err());
    let mut x = vec![0.0; 64];
    x[3] = f64::NAN;
    assert!(net.forward(&p, &x, 1).is_err());
    let other = UNet::new(NetConfig::default()).unwrap();
    assert!(other.forward(&p, &vec![0.0; 1000], 1).is_err());
}

#[test]
fn non_finite_activation_names_the_layer() {
    let net = UNet::new(NetConfig::tiny()).unwrap();
    let mut p: ParamStore<f64> = net.init_params(1);
    p.by_name_mut("enc1.down.bias").unwrap()[0] = f64::INFINITY;
    let err = net.forward(&p, &gaussian(64, 1), 3).unwrap_err();
    assert!(err.to_string().contains("enc1.down"), "{err}");
}

#[test]
fn attention_blocks_are_identity_at_init() {
    let net = UNet::new(NetConfig::with_base(16)).unwrap();
    let plain = net.without_attention();
    let p: ParamStore<f32> = net.init_params(4);
    let x: Vec<f32> = gaussian(1000, 5).into_iter().map(|v| v as f32).collect();
    for t in [1, 250, 1000] {
        let a = net.forward(&p, &x, t).unwrap();
        let b = plain.forward(&p, &x, t).unwrap();
        assert!(a.iter().zip(&b).all(|(u, v)| u.to_bits() == v.to_bits()));
    }
}

#[test]
fn activations_stay_bounded_at_init() {
    let net = UNet::new(NetConfig::default()).unwrap();
    let p: ParamStore<f32> = net.init_params(9);
    let x: Vec<f32> = gaussian(1000, 10).into_iter().map(|v| v as f32).collect();
    for t in [1, 1000] {
        let (_, tape) = net.forward_tape(&p, &x, t).unwrap();
        for (name, peak) in tape.activation_peaks() {
            assert!(*peak < 1e6, "{name}: {peak}");
        }
    }
}

#[test]
fn time_embedding_properties() {
    let net = UNet::new(NetConfig::tiny()).unwrap();
    let p: ParamStore<f64> = net.init_params(3);
    let a = net.time_embed(&p, 17).unwrap();
    assert_eq!(a, net.time_embed(&p, 17).unwrap());
    assert_eq!(a.len(), NetConfig::tiny().time_embed_dim);
    assert!(net.time_embed(&p, 1001).is_err());
    for dim in [8, 32, 192] {
        let s0 = sinusoid(0, dim, 1000);
        let s1 = sinusoid(1000, dim, 1000);
        let differing = s0
            .iter()
            .zip(&s1)
            .filter(|(a, b)| (*a - *b).abs() > 0.1)
            .count();
        assert!(2 * differing >= dim, "dim {dim}: only {differing} differ");
    }
}

/// `L = sum(c * y) + 0.5 * sum(y^2)`; returns the loss and `dL/dy`.
fn probe_loss(y: &[f64], c: &[f64]) -> (f64, Vec<f64>) {
    let l = y.iter().zip(c).map(|(a, b)| a * b + 0.5 * a * a).sum();
    (l, y.iter().zip(c).map(|(a, b)| a + b).collect())
}

fn gradient_check(p: &ParamStore<f64>, net: &UNet, t: usize, seed: u64) -> (f64, String) {
    let x = gaussian(64, seed);
    let c = gaussian(64, seed + 1);
    let (y, tape) = net.forward_tape(p, &x, t).unwrap();
    let (_, dy) = probe_loss(&y, &c);
    let mut grads = p.zeros_like();
    net.backward(p, &tape, &dy, &mut grads).unwrap();

    let h = 1e-5;
    let mut worst = (0.0, String::new());
    let mut q = p.clone();
    for spec in p.layout().specs() {
        for i in spec.offset..spec.offset + spec.len {
            let orig = q.values()[i];
            q.values_mut()[i] = orig + h;
            let lp = probe_loss(&net.forward(&q, &x, t).unwrap(), &c).0;
            q.values_mut()[i] = orig - h;
            let lm = probe_loss(&net.forward(&q, &x, t).unwrap(), &c).0;
            q.values_mut()[i] = orig;
            let fd = (lp - lm) / (2.0 * h);
            let an = grads[i];
            // gradients below the round-off floor of the difference quotient
            // (some are exactly zero, e.g. key biases under softmax) are
            // compared absolutely
            let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-4);
            if rel > worst.0 {
                worst = (
                    rel,
                    format!(
                        "{}[{}]: analytic {an:e} fd {fd:e}",
                        spec.name,
                        i - spec.offset
                    ),
                );
            }
        }
    }
    worst
}

#[test]
fn gradient_matches_finite_differences_at_init() {
    let net = UNet::new(NetConfig::tiny()).unwrap();
    let p: ParamStore<f64> = net.init_params(21);
    let (rel, at) = gradient_check(&p, &net, 137, 1);
    assert!(rel <= 1e-3, "relative error {rel:e} at {at}");
}

#[test]
fn gradient_matches_finite_differences_when_perturbed() {
    let net = UNet::new(NetConfig::tiny()).unwrap();
    let mut p: ParamStore<f64> = net.init_params(22);
    let noise = gaussian(p.num_params(), 23);
    for (v, z) in p.values_mut().iter_mut().zip(noise) {
        *v += 0.1 * z;
    }
    let (rel, at) = gradient_check(&p, &net, 871, 5);
    assert!(rel <= 1e-3, "relative error {rel:e} at {at}");
}
