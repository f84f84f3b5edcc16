//! Seeded fixtures shared by the benchmarks.

use cdnet_core::net::{ConvLstmGates, ConvLstmState};
use cdnet_core::{Scalar, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random_tensor<S: Scalar>(shape: &[usize], seed: u64) -> Tensor<S> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| S::of(rng.gen_range(-1.0..1.0))).collect()).expect("shape matches data")
}

/// Gates for a `depth`-channel cell with 3x3 kernels over `input_depth` channels.
pub fn random_gates(input_depth: usize, depth: usize, seed: u64) -> ConvLstmGates<f32> {
    let scale = 1.0 / ((input_depth + depth) as f64 * 9.0).sqrt();
    let scaled = |shape: &[usize], s: u64| random_tensor::<f32>(shape, s).map(|v| v * scale as f32);
    ConvLstmGates {
        w_x: std::array::from_fn(|g| scaled(&[depth, input_depth, 3, 3], seed + g as u64)),
        w_h: std::array::from_fn(|g| scaled(&[depth, depth, 3, 3], seed + 10 + g as u64)),
        bias: std::array::from_fn(|_| Tensor::zeros(&[depth])),
    }
}

pub fn random_state(depth: usize, size: usize, seed: u64) -> ConvLstmState<f32> {
    ConvLstmState {
        h: random_tensor(&[depth, size, size], seed),
        c: random_tensor(&[depth, size, size], seed + 1),
    }
}
