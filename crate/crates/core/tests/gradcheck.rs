use cdnet_core::net::{build, gradients, Batch, LossSpec, GATES};
use cdnet_core::{ModelParams, NetConfig, Tensor, Variant};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-5;

fn tiny(variant: Variant) -> NetConfig {
    NetConfig {
        base_depth: 2,
        levels: 2,
        num_dates: Some(2),
        ..NetConfig::new(variant, 2)
    }
}

/// Parameters with every tensor (biases, batch-norm affine) randomized.
fn randomized(cfg: &NetConfig, seed: u64) -> ModelParams<f64> {
    let p: ModelParams<f64> = build(cfg, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xfeed);
    let mut tensors = p.tensors().clone();
    for (k, t) in tensors.iter_mut() {
        if ModelParams::<f64>::is_trainable(k) && !k.ends_with("weight") {
            for v in t.data_mut() {
                *v += rng.gen_range(-0.3..0.3);
            }
        }
        if k.ends_with(".bn.weight") {
            for v in t.data_mut() {
                *v = rng.gen_range(0.5..1.5);
            }
        }
    }
    ModelParams::from_tensors(cfg.clone(), seed, tensors).unwrap()
}

fn batch(seed: u64) -> Batch<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = [2, 2, 2, 4, 4];
    let n = shape.iter().product();
    Batch {
        inputs: Tensor::new(&shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap(),
        labels: (0..2 * 16).map(|_| rng.gen_range(0..2u8)).collect(),
    }
}

fn loss_at(params: &ModelParams<f64>, key: &str, idx: usize, delta: f64, b: &Batch<f64>, weighting: &LossSpec) -> f64 {
    let mut p = params.clone();
    p.get_mut(key).unwrap().data_mut()[idx] += delta;
    gradients(&p, b, weighting).unwrap().loss
}

/// Fourth-order central differences in float64 for every trainable scalar.
fn numeric(params: &ModelParams<f64>, b: &Batch<f64>, weighting: &LossSpec) -> Vec<(String, usize, f64)> {
    let mut out = Vec::new();
    for key in params.trainable_keys() {
        for i in 0..params.get(key).unwrap().numel() {
            let f = |k: f64| loss_at(params, key, i, k * H, b, weighting);
            let d = (-f(2.0) + 8.0 * f(1.0) - 8.0 * f(-1.0) + f(-2.0)) / (12.0 * H);
            out.push((key.to_string(), i, d));
        }
    }
    out
}

fn rel_err(a: f64, n: f64) -> f64 {
    let scale = a.abs().max(n.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - n).abs() / scale
    }
}

#[test]
fn float64_gradients_match_finite_differences() {
    for variant in [Variant::UnetLstm, Variant::UnetPlain] {
        let params = randomized(&tiny(variant), 1);
        let b = batch(2);
        let weighting = LossSpec::new(vec![0.7, 1.3]);
        let analytic = gradients(&params, &b, &weighting).unwrap().grads;
        let mut worst = 0.0f64;
        for (key, i, n) in numeric(&params, &b, &weighting) {
            let a = analytic[&key].data()[i];
            // Below the floor, differences are limited by float64 roundoff in the loss.
            let err = (a - n).abs() / a.abs().max(n.abs()).max(1e-4);
            worst = worst.max(err);
            assert!(err <= 1e-6, "{variant} {key}[{i}]: analytic {a}, numeric {n}");
        }
        eprintln!("{variant}: worst float64 error {worst:e}");
    }
}

#[test]
fn float32_gradients_match_float64_oracle() {
    let cfg = tiny(Variant::UnetLstm);
    let params = randomized(&cfg, 3);
    let b = batch(4);
    let weighting = LossSpec::new(vec![0.7, 1.3]);
    let p32: ModelParams<f32> = params.cast();
    let b32 = Batch {
        inputs: b.inputs.cast::<f32>(),
        labels: b.labels.clone(),
    };
    let analytic = gradients(&p32, &b32, &weighting).unwrap().grads;
    let checks = numeric(&params, &b, &weighting);
    let passed = checks
        .iter()
        .filter(|(k, i, n)| rel_err(analytic[k].data()[*i] as f64, *n) <= 1e-3)
        .count();
    let rate = passed as f64 / checks.len() as f64;
    assert!(rate >= 0.99, "{passed}/{} within 1e-3", checks.len());
    for gate in GATES {
        for role in ["w_x", "w_h"] {
            let key = format!("lstm.1.{gate}.{role}");
            let of_gate: Vec<_> = checks.iter().filter(|(k, _, _)| *k == key).collect();
            assert!(!of_gate.is_empty());
            assert!(of_gate.iter().any(|(_, _, n)| n.abs() > 1e-8), "{key} has no signal");
        }
    }
}

#[test]
fn zero_input_channel_gets_zero_gradient() {
    let cfg = tiny(Variant::UnetLstm);
    let params = randomized(&cfg, 5);
    let mut b = batch(6);
    let hw = 16;
    // Channel 0 of every date and sample is zero.
    for chunk in b.inputs.data_mut().chunks_mut(2 * hw) {
        chunk[..hw].iter_mut().for_each(|v| *v = 0.0);
    }
    let g = gradients(&params, &b, &LossSpec::new(vec![1.0, 1.0])).unwrap();
    let w = &g.grads["enc.1.conv.weight"];
    for o in 0..2 {
        for k in 0..9 {
            assert_eq!(w.data()[(o * 2) * 9 + k], 0.0);
        }
    }
    assert!(w.data().iter().any(|&v| v != 0.0));
}

#[test]
fn doubling_loss_weights_doubles_gradients() {
    let cfg = tiny(Variant::UnetLstm);
    let params = randomized(&cfg, 7);
    let b = batch(8);
    let one = gradients(&params, &b, &LossSpec::new(vec![0.4, 1.6])).unwrap();
    let two = gradients(&params, &b, &LossSpec::new(vec![0.8, 3.2])).unwrap();
    assert!((two.loss - 2.0 * one.loss).abs() <= 1e-6 * one.loss.abs());
    for (k, g1) in &one.grads {
        for (a, b) in g1.data().iter().zip(two.grads[k].data()) {
            assert!((b - 2.0 * a).abs() <= 1e-6 * a.abs().max(1e-9), "{k}");
        }
    }
}
