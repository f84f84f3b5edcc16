use cdnet_bench::{random_gates, random_state, random_tensor};
use cdnet_core::net::{build, convlstm_step, forward_batch, gradients, Batch, LossSpec};
use cdnet_core::tensor::conv2d;
use cdnet_core::{Mode, ModelParams, NetConfig, Variant};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

fn conv(c: &mut Criterion) {
    let mut g = c.benchmark_group("conv2d_3x3");
    for (cin, cout, size) in [(4, 16, 32), (16, 16, 32), (64, 128, 8), (256, 256, 2)] {
        let x = random_tensor::<f32>(&[8, cin, size, size], 1);
        let w = random_tensor::<f32>(&[cout, cin, 3, 3], 2);
        g.bench_function(BenchmarkId::from_parameter(format!("{cin}x{cout}@{size}")), |b| {
            b.iter(|| conv2d(&x, &w, None).unwrap())
        });
    }
    g.finish();
}

fn lstm_step(c: &mut Criterion) {
    let mut g = c.benchmark_group("convlstm_step");
    for (depth, size) in [(16, 32), (64, 8)] {
        let gates = random_gates(depth, depth, 3);
        let x = random_tensor::<f32>(&[depth, size, size], 4);
        let state = random_state(depth, size, 5);
        g.bench_function(BenchmarkId::from_parameter(format!("{depth}@{size}")), |b| {
            b.iter(|| convlstm_step(&gates, &x, &state).unwrap())
        });
    }
    g.finish();
}

fn network(c: &mut Criterion) {
    let mut g = c.benchmark_group("network");
    g.sample_size(10);
    for (variant, t) in [(Variant::UnetPlain, 2), (Variant::UnetLstm, 2), (Variant::UnetLstm, 5)] {
        let cfg = NetConfig {
            num_dates: Some(t),
            ..NetConfig::new(variant, 4)
        };
        let params: ModelParams<f32> = build(&cfg, 0).unwrap();
        let x = random_tensor::<f32>(&[4, t, 4, 32, 32], 6);
        let name = format!("{variant}_t{t}");
        g.bench_function(BenchmarkId::new("forward_eval", &name), |b| {
            b.iter(|| forward_batch(&params, &x, Mode::Eval).unwrap())
        });
        let batch = Batch {
            inputs: x.clone(),
            labels: vec![0; 4 * 32 * 32],
        };
        let weighting = LossSpec::new(vec![0.2, 1.8]);
        g.bench_function(BenchmarkId::new("train_step", &name), |b| {
            b.iter(|| gradients(&params, &batch, &weighting).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, conv, lstm_step, network);
criterion_main!(benches);
