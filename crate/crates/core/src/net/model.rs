use std::collections::BTreeMap;

use super::convlstm::{self, GATES};
use super::graph::{softmax_channels, BatchMoments, Graph, Var};
use super::params::ModelParams;
use super::{Mode, Variant};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// A training mini-batch: `inputs: [N, T, C, H, W]`, `labels: N*H*W` class ids.
#[derive(Clone, Debug)]
pub struct Batch<S> {
    pub inputs: Tensor<S>,
    pub labels: Vec<u8>,
}

/// Per-class loss weights and the batch-norm mode to differentiate through.
#[derive(Clone, Debug)]
pub struct LossSpec {
    pub class_weights: Vec<f64>,
    pub mode: Mode,
}

impl LossSpec {
    pub fn new(class_weights: Vec<f64>) -> Self {
        Self {
            class_weights,
            mode: Mode::Train,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Gradients<S> {
    pub loss: f64,
    pub grads: BTreeMap<String, Tensor<S>>,
    /// Batch-norm moments observed in train mode, keyed by layer prefix.
    pub moments: Vec<(String, BatchMoments)>,
}

/// Spatial bookkeeping of one forward pass.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ShapeTrace {
    /// `[D, H, W]` of each encoder level's per-date output.
    pub encoder: Vec<[usize; 3]>,
    /// `[D, H, W]` of the temporal summary passed to the decoder at each level.
    pub skips: Vec<[usize; 3]>,
    /// `[K, H, W]`.
    pub output: [usize; 3],
}

struct Pass<S> {
    graph: Graph<S>,
    logits: Var,
    params: BTreeMap<String, Var>,
    moments: Vec<(String, BatchMoments)>,
    encoder: Vec<Var>,
    skips: Vec<Var>,
}

struct Builder<'a, S> {
    g: Graph<S>,
    model: &'a ModelParams<S>,
    mode: Mode,
    params: BTreeMap<String, Var>,
    moments: Vec<(String, BatchMoments)>,
}

impl<'a, S: Scalar> Builder<'a, S> {
    fn p(&mut self, key: &str) -> Result<Var> {
        if let Some(&v) = self.params.get(key) {
            return Ok(v);
        }
        let t = self.model.get(key)?.clone();
        let v = self.g.param(t);
        self.params.insert(key.to_string(), v);
        Ok(v)
    }

    /// conv 3x3 -> batch norm -> ReLU.
    fn block(&mut self, prefix: &str, x: Var) -> Result<Var> {
        let w = self.p(&format!("{prefix}.conv.weight"))?;
        let b = self.p(&format!("{prefix}.conv.bias"))?;
        let y = self.g.conv(x, w, Some(b))?;
        let gamma = self.p(&format!("{prefix}.bn.weight"))?;
        let beta = self.p(&format!("{prefix}.bn.bias"))?;
        let y = match self.mode {
            Mode::Train => {
                let (y, m) = self.g.batch_norm_train(y, gamma, beta)?;
                self.moments.push((format!("{prefix}.bn"), m));
                y
            }
            Mode::Eval => {
                let mean = self.model.get(&format!("{prefix}.bn.running_mean"))?;
                let var = self.model.get(&format!("{prefix}.bn.running_var"))?;
                self.g.batch_norm_eval(y, gamma, beta, mean, var)?
            }
        };
        Ok(self.g.relu(y))
    }

    /// Level outputs: level 1 keeps the input resolution, every later level
    /// pools 2x2 after its block.
    fn encoder(&mut self, x: Var) -> Result<Vec<Var>> {
        let levels = self.model.config().levels;
        let mut outs = Vec::with_capacity(levels);
        let mut cur = x;
        for level in 1..=levels {
            cur = self.block(&format!("enc.{level}"), cur)?;
            if level > 1 {
                cur = self.g.max_pool(cur)?;
            }
            outs.push(cur);
        }
        Ok(outs)
    }

    fn decoder(&mut self, skips: &[Var]) -> Result<Var> {
        let levels = self.model.config().levels;
        let mut z = self.block(&format!("dec.{levels}"), skips[levels - 1])?;
        for level in (1..levels).rev() {
            let up = self.g.upsample(z);
            let cat = self.g.concat(&[up, skips[level - 1]], 1)?;
            z = self.block(&format!("dec.{level}"), cat)?;
        }
        let w = self.p("head.weight")?;
        let b = self.p("head.bias")?;
        self.g.conv(z, w, Some(b))
    }

    /// Run each level's ConvLSTM over the dates and return the final hidden states.
    fn temporal(&mut self, encoded: &[Var], n: usize, t: usize) -> Result<Vec<Var>> {
        let mut skips = Vec::with_capacity(encoded.len());
        for (li, &level_out) in encoded.iter().enumerate() {
            let level = li + 1;
            let mut keys = |role: &str| -> Result<[Var; 4]> {
                let mut out = [None; 4];
                for (slot, gate) in out.iter_mut().zip(GATES) {
                    *slot = Some(self.p(&format!("lstm.{level}.{gate}.{role}"))?);
                }
                Ok(out.map(|v| v.expect("filled")))
            };
            let w_x = keys("w_x")?;
            let w_h = keys("w_h")?;
            let bias = keys("bias")?;
            let vars = convlstm::stack_gate_weights(&mut self.g, &w_x, &w_h, &bias)?;
            let mut state = None;
            for date in 0..t {
                let x = self.g.slice(level_out, 0, date * n, n)?;
                state = Some(convlstm::step(&mut self.g, &vars, x, state)?);
            }
            skips.push(state.expect("at least one date").0);
        }
        Ok(skips)
    }
}

fn check_input<S: Scalar>(model: &ModelParams<S>, x: &Tensor<S>) -> Result<(usize, usize, usize, usize, usize)> {
    let cfg = model.config();
    if x.rank() != 5 {
        return Err(Error::Shape(format!("expected [N, T, C, H, W], got {:?}", x.shape())));
    }
    let (n, t, c, h, w) = (x.dim(0), x.dim(1), x.dim(2), x.dim(3), x.dim(4));
    if n == 0 {
        return Err(Error::Shape("empty batch".into()));
    }
    if t < 2 {
        return Err(Error::Shape(format!("need at least 2 dates, got {t}")));
    }
    if c != cfg.in_channels {
        return Err(Error::Shape(format!(
            "model expects {} bands, input has {c}",
            cfg.in_channels
        )));
    }
    if cfg.variant == Variant::UnetPlain && Some(t) != cfg.num_dates {
        return Err(Error::Shape(format!(
            "unet_plain built for {:?} dates, input has {t}",
            cfg.num_dates
        )));
    }
    let div = cfg.spatial_divisor();
    if h == 0 || w == 0 || h % div != 0 || w % div != 0 {
        return Err(Error::Shape(format!(
            "spatial size {h}x{w} is not a positive multiple of {div}"
        )));
    }
    Ok((n, t, c, h, w))
}

fn run<S: Scalar>(model: &ModelParams<S>, inputs: &Tensor<S>, mode: Mode) -> Result<Pass<S>> {
    let (n, t, c, h, w) = check_input(model, inputs)?;
    let mut b = Builder {
        g: Graph::new(),
        model,
        mode,
        params: BTreeMap::new(),
        moments: Vec::new(),
    };
    let (encoder, skips) = match model.config().variant {
        Variant::UnetLstm => {
            // Date-major stack [T*N, C, H, W]: the shared encoder sees every
            // date of every sample in one batch.
            let plane = c * h * w;
            let mut data = Vec::with_capacity(inputs.numel());
            for date in 0..t {
                for i in 0..n {
                    let s = (i * t + date) * plane;
                    data.extend_from_slice(&inputs.data()[s..s + plane]);
                }
            }
            let x = b.g.input(Tensor::new(&[t * n, c, h, w], data)?);
            let enc = b.encoder(x)?;
            let skips = b.temporal(&enc, n, t)?;
            (enc, skips)
        }
        Variant::UnetPlain => {
            // [N, T, C, H, W] is already [N, T*C, H, W] in memory.
            let x = b.g.input(inputs.clone().reshape(&[n, t * c, h, w])?);
            let enc = b.encoder(x)?;
            (enc.clone(), enc)
        }
    };
    let logits = b.decoder(&skips)?;
    Ok(Pass {
        graph: b.g,
        logits,
        params: b.params,
        moments: b.moments,
        encoder,
        skips,
    })
}

/// Class probabilities `[N, K, H, W]` for a batch `[N, T, C, H, W]`.
pub fn forward_batch<S: Scalar>(model: &ModelParams<S>, inputs: &Tensor<S>, mode: Mode) -> Result<Tensor<S>> {
    let pass = run(model, inputs, mode)?;
    Ok(softmax_channels(pass.graph.value(pass.logits)))
}

/// Class probabilities `[K, H, W]` for one sample `[T, C, H, W]`.
pub fn forward<S: Scalar>(model: &ModelParams<S>, input: &Tensor<S>, mode: Mode) -> Result<Tensor<S>> {
    if input.rank() != 4 {
        return Err(Error::Shape(format!("expected [T, C, H, W], got {:?}", input.shape())));
    }
    let mut shape = vec![1];
    shape.extend_from_slice(input.shape());
    let out = forward_batch(model, &input.clone().reshape(&shape)?, mode)?;
    Ok(out.slice0(0))
}

/// Per-level shapes of a forward pass over one sample `[T, C, H, W]`.
pub fn trace_shapes<S: Scalar>(model: &ModelParams<S>, input: &Tensor<S>) -> Result<ShapeTrace> {
    let mut shape = vec![1];
    shape.extend_from_slice(input.shape());
    let pass = run(model, &input.clone().reshape(&shape)?, Mode::Eval)?;
    let dims = |v: Var| {
        let s = pass.graph.value(v).shape();
        [s[1], s[2], s[3]]
    };
    let out = dims(pass.logits);
    Ok(ShapeTrace {
        encoder: pass.encoder.iter().map(|&v| dims(v)).collect(),
        skips: pass.skips.iter().map(|&v| dims(v)).collect(),
        output: out,
    })
}

/// Weighted cross-entropy of a batch and its reverse-mode gradient with
/// respect to every learnable tensor.
pub fn gradients<S: Scalar>(model: &ModelParams<S>, batch: &Batch<S>, loss: &LossSpec) -> Result<Gradients<S>> {
    let mut pass = run(model, &batch.inputs, loss.mode)?;
    let weights: Vec<S> = loss.class_weights.iter().map(|&w| S::of(w)).collect();
    let root = pass
        .graph
        .weighted_cross_entropy(pass.logits, &batch.labels, &weights)?;
    let value = pass.graph.value(root).data()[0].f64();
    let mut slots = pass.graph.backward(root)?;
    let mut grads = BTreeMap::new();
    for (key, var) in std::mem::take(&mut pass.params) {
        let t = model.get(&key)?;
        let g = slots[var.index()].take().unwrap_or_else(|| Tensor::zeros(t.shape()));
        grads.insert(key, g);
    }
    Ok(Gradients {
        loss: value,
        grads,
        moments: pass.moments,
    })
}
