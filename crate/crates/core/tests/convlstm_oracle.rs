use cdnet_core::net::{convlstm_step, ConvLstmGates, ConvLstmState};
use cdnet_core::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Textbook fully-connected LSTM cell on plain vectors.
struct ScalarLstm {
    /// `[gate][unit][input]`, gates ordered input, forget, output, candidate.
    wx: Vec<Vec<Vec<f64>>>,
    wh: Vec<Vec<Vec<f64>>>,
    b: Vec<Vec<f64>>,
}

impl ScalarLstm {
    fn step(&self, x: &[f64], h: &[f64], c: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        let d = h.len();
        let pre = |g: usize, u: usize| {
            let mut s = self.b[g][u];
            for (j, xv) in x.iter().enumerate() {
                s += self.wx[g][u][j] * xv;
            }
            for (j, hv) in h.iter().enumerate() {
                s += self.wh[g][u][j] * hv;
            }
            s
        };
        let mut h2 = vec![0.0; d];
        let mut c2 = vec![0.0; d];
        for u in 0..d {
            let i = sig(pre(0, u));
            let f = sig(pre(1, u));
            let o = sig(pre(2, u));
            let g = pre(3, u).tanh();
            c2[u] = f * c[u] + i * g;
            h2[u] = o * c2[u].tanh();
        }
        (h2, c2)
    }
}

#[test]
fn one_by_one_cell_matches_scalar_lstm() {
    let (din, d) = (3, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut draw = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect() };
    let wx: Vec<Vec<Vec<f64>>> = (0..4).map(|_| (0..d).map(|_| draw(din)).collect()).collect();
    let wh: Vec<Vec<Vec<f64>>> = (0..4).map(|_| (0..d).map(|_| draw(d)).collect()).collect();
    let b: Vec<Vec<f64>> = (0..4).map(|_| draw(d)).collect();
    let oracle = ScalarLstm {
        wx: wx.clone(),
        wh: wh.clone(),
        b: b.clone(),
    };
    let kernel =
        |w: &Vec<Vec<f64>>, cols: usize| Tensor::new(&[d, cols, 1, 1], w.iter().flatten().copied().collect()).unwrap();
    let gates = ConvLstmGates {
        w_x: std::array::from_fn(|g| kernel(&wx[g], din)),
        w_h: std::array::from_fn(|g| kernel(&wh[g], d)),
        bias: std::array::from_fn(|g| Tensor::new(&[d], b[g].clone()).unwrap()),
    };

    let mut state = ConvLstmState::<f64>::zeros(d, 1, 1);
    let (mut h, mut c) = (vec![0.0; d], vec![0.0; d]);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let x = draw(din).iter().map(|v| 2.0 * v).collect::<Vec<f64>>();
        state = convlstm_step(&gates, &Tensor::new(&[din, 1, 1], x.clone()).unwrap(), &state).unwrap();
        (h, c) = oracle.step(&x, &h, &c);
        for u in 0..d {
            worst = worst.max((state.h.data()[u] - h[u]).abs());
            worst = worst.max((state.c.data()[u] - c[u]).abs());
        }
    }
    assert!(worst <= 1e-6, "max deviation {worst}");
}
