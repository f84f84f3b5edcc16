//! Convolutional LSTM cell (no peepholes):
//!
//! ```text
//! i = σ(Wxi*x + Whi*h + bi)    f = σ(Wxf*x + Whf*h + bf)
//! o = σ(Wxo*x + Who*h + bo)    g = tanh(Wxg*x + Whg*h + bg)
//! c' = f⊙c + i⊙g               h' = o⊙tanh(c')
//! ```
//!
//! All `*` are same-padded stride-1 convolutions. The four gates are evaluated
//! as one convolution over `[x, h]` with the gate kernels stacked.

use super::graph::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Gate order used for stacking and for parameter keys.
pub const GATES: [&str; 4] = ["input", "forget", "output", "candidate"];

#[derive(Clone, Debug, PartialEq)]
pub struct ConvLstmState<S> {
    /// Hidden state `[D, H, W]`.
    pub h: Tensor<S>,
    /// Cell state `[D, H, W]`.
    pub c: Tensor<S>,
}

impl<S: Scalar> ConvLstmState<S> {
    pub fn zeros(depth: usize, height: usize, width: usize) -> Self {
        Self {
            h: Tensor::zeros(&[depth, height, width]),
            c: Tensor::zeros(&[depth, height, width]),
        }
    }
}

/// Per-gate kernels in [`GATES`] order. `w_x[g]: [D, D_in, k, k]`,
/// `w_h[g]: [D, D, k, k]`, `bias[g]: [D]`.
#[derive(Clone, Debug)]
pub struct ConvLstmGates<S> {
    pub w_x: [Tensor<S>; 4],
    pub w_h: [Tensor<S>; 4],
    pub bias: [Tensor<S>; 4],
}

/// Graph handles for one cell's stacked weights.
pub(crate) struct LstmVars {
    /// `[4D, D_in + D, k, k]`, gates stacked on axis 0, `[x, h]` on axis 1.
    full: Var,
    /// `[4D, D_in, k, k]`, used while the state is still zero.
    input_only: Var,
    bias: Var,
    depth: usize,
}

pub(crate) fn stack_gate_weights<S: Scalar>(
    g: &mut Graph<S>,
    w_x: &[Var; 4],
    w_h: &[Var; 4],
    bias: &[Var; 4],
) -> Result<LstmVars> {
    let depth = g.value(w_x[0]).dim(0);
    let per_gate = w_x
        .iter()
        .zip(w_h)
        .map(|(&x, &h)| g.concat(&[x, h], 1))
        .collect::<Result<Vec<_>>>()?;
    let full = g.concat(&per_gate, 0)?;
    let input_only = g.concat(w_x, 0)?;
    let bias = g.concat(bias, 0)?;
    Ok(LstmVars {
        full,
        input_only,
        bias,
        depth,
    })
}

/// One time step on a batch `x: [N, D_in, H, W]`. `state = None` means the
/// zero initial state. Returns `(h', c')`.
pub(crate) fn step<S: Scalar>(g: &mut Graph<S>, w: &LstmVars, x: Var, state: Option<(Var, Var)>) -> Result<(Var, Var)> {
    let pre = match state {
        Some((h, _)) => {
            let xh = g.concat(&[x, h], 1)?;
            g.conv(xh, w.full, Some(w.bias))?
        }
        None => g.conv(x, w.input_only, Some(w.bias))?,
    };
    let d = w.depth;
    let i = g.slice(pre, 1, 0, d)?;
    let f = g.slice(pre, 1, d, d)?;
    let o = g.slice(pre, 1, 2 * d, d)?;
    let cand = g.slice(pre, 1, 3 * d, d)?;
    let i = g.sigmoid(i);
    let o = g.sigmoid(o);
    let cand = g.tanh(cand);
    let ig = g.mul(i, cand)?;
    let c_next = match state {
        Some((_, c)) => {
            let f = g.sigmoid(f);
            let fc = g.mul(f, c)?;
            g.add(fc, ig)?
        }
        None => ig,
    };
    let tc = g.tanh(c_next);
    let h_next = g.mul(o, tc)?;
    Ok((h_next, c_next))
}

/// Advance a single-sample state by one input frame `x: [D_in, H, W]`.
pub fn convlstm_step<S: Scalar>(
    gates: &ConvLstmGates<S>,
    x: &Tensor<S>,
    state: &ConvLstmState<S>,
) -> Result<ConvLstmState<S>> {
    if x.rank() != 3 || state.h.rank() != 3 || state.h.shape() != state.c.shape() {
        return Err(Error::Shape(format!(
            "convlstm_step: x {:?}, h {:?}, c {:?}",
            x.shape(),
            state.h.shape(),
            state.c.shape()
        )));
    }
    if x.shape()[1..] != state.h.shape()[1..] {
        return Err(Error::Shape(format!(
            "convlstm_step: input {:?} and state {:?} differ spatially",
            x.shape(),
            state.h.shape()
        )));
    }
    let depth = state.h.dim(0);
    for gi in 0..4 {
        let (wx, wh, b) = (&gates.w_x[gi], &gates.w_h[gi], &gates.bias[gi]);
        let ok = wx.rank() == 4
            && wx.dim(0) == depth
            && wx.dim(1) == x.dim(0)
            && wh.shape() == [depth, depth, wx.dim(2), wx.dim(3)]
            && b.numel() == depth;
        if !ok {
            return Err(Error::Shape(format!(
                "convlstm_step: {} gate kernels {:?}/{:?}/{:?}",
                GATES[gi],
                wx.shape(),
                wh.shape(),
                b.shape()
            )));
        }
    }

    let batch = |t: &Tensor<S>| -> Result<Tensor<S>> {
        let mut shape = vec![1];
        shape.extend_from_slice(t.shape());
        t.clone().reshape(&shape)
    };
    let mut g = Graph::new();
    let w_x = gates.w_x.clone().map(|t| g.input(t));
    let w_h = gates.w_h.clone().map(|t| g.input(t));
    let bias = gates.bias.clone().map(|t| g.input(t));
    let vars = stack_gate_weights(&mut g, &w_x, &w_h, &bias)?;
    let xv = g.input(batch(x)?);
    let h = g.input(batch(&state.h)?);
    let c = g.input(batch(&state.c)?);
    let (h, c) = step(&mut g, &vars, xv, Some((h, c)))?;
    let shape = state.h.shape();
    Ok(ConvLstmState {
        h: g.value(h).clone().reshape(shape)?,
        c: g.value(c).clone().reshape(shape)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gates(depth: usize, din: usize, k: usize, fill: impl Fn(usize) -> f64) -> ConvLstmGates<f64> {
        let mut n = 0;
        let mut next = |shape: &[usize]| {
            let len: usize = shape.iter().product();
            let data = (0..len).map(|i| fill(n + i)).collect();
            n += len;
            Tensor::new(shape, data).unwrap()
        };
        ConvLstmGates {
            w_x: std::array::from_fn(|_| next(&[depth, din, k, k])),
            w_h: std::array::from_fn(|_| next(&[depth, depth, k, k])),
            bias: std::array::from_fn(|_| next(&[depth])),
        }
    }

    #[test]
    fn zero_everything_stays_zero() {
        let g = gates(2, 3, 3, |_| 0.0);
        let x = Tensor::zeros(&[3, 4, 4]);
        let s = convlstm_step(&g, &x, &ConvLstmState::zeros(2, 4, 4)).unwrap();
        assert!(s.h.data().iter().all(|&v| v == 0.0));
        assert!(s.c.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_state_shortcut_matches_explicit_zero_state() {
        let gt = gates(2, 3, 3, |i| ((i * 37 % 101) as f64 / 101.0 - 0.5) * 0.6);
        let x: Tensor<f64> = Tensor::new(&[1, 3, 4, 4], (0..48).map(|i| (i as f64 * 0.21).cos()).collect()).unwrap();
        let mut g = Graph::new();
        let w_x = gt.w_x.clone().map(|t| g.input(t));
        let w_h = gt.w_h.clone().map(|t| g.input(t));
        let b = gt.bias.clone().map(|t| g.input(t));
        let vars = stack_gate_weights(&mut g, &w_x, &w_h, &b).unwrap();
        let xv = g.input(x.clone());
        let (h0, c0) = step(&mut g, &vars, xv, None).unwrap();
        let zh = g.input(Tensor::zeros(&[1, 2, 4, 4]));
        let zc = g.input(Tensor::zeros(&[1, 2, 4, 4]));
        let (h1, c1) = step(&mut g, &vars, xv, Some((zh, zc))).unwrap();
        for (a, b) in g.value(h0).data().iter().zip(g.value(h1).data()) {
            assert!((a - b).abs() < 1e-14);
        }
        for (a, b) in g.value(c0).data().iter().zip(g.value(c1).data()) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn saturated_forget_gate_accumulates_cell() {
        // forget bias -> +inf: c' -> c + i*g.
        let mut gt = gates(1, 1, 3, |i| ((i * 13 % 17) as f64 / 17.0 - 0.5) * 0.4);
        gt.bias[1] = Tensor::new(&[1], vec![30.0]).unwrap();
        let x = Tensor::new(&[1, 3, 3], (0..9).map(|i| i as f64 * 0.1 - 0.4).collect()).unwrap();
        let state = ConvLstmState {
            h: Tensor::new(&[1, 3, 3], (0..9).map(|i| (i as f64).sin() * 0.5).collect()).unwrap(),
            c: Tensor::new(&[1, 3, 3], (0..9).map(|i| (i as f64).cos()).collect()).unwrap(),
        };
        let next = convlstm_step(&gt, &x, &state).unwrap();
        // Independent evaluation of i*g with the same kernels.
        let mut no_forget = gt.clone();
        no_forget.bias[1] = Tensor::new(&[1], vec![-60.0]).unwrap();
        let ig = convlstm_step(&no_forget, &x, &state).unwrap().c;
        for ((n, c), d) in next.c.data().iter().zip(state.c.data()).zip(ig.data()) {
            assert!((n - (c + d)).abs() < 1e-4, "{n} vs {}", c + d);
        }
    }

    #[test]
    fn shape_violations_rejected() {
        let g = gates(2, 3, 3, |_| 0.1);
        let bad_x = Tensor::zeros(&[2, 4, 4]);
        assert!(convlstm_step(&g, &bad_x, &ConvLstmState::zeros(2, 4, 4)).is_err());
        let x = Tensor::zeros(&[3, 4, 4]);
        assert!(convlstm_step(&g, &x, &ConvLstmState::zeros(2, 5, 4)).is_err());
    }
}
