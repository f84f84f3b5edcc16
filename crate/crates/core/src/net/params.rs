use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::convlstm::GATES;
use super::graph::BatchMoments;
use super::{NetConfig, Variant};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Running-statistics momentum (weight of the newest batch).
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Clone, Copy, Debug)]
enum Init {
    /// Kaiming-uniform over fan-in: U(-sqrt(6/fan_in), sqrt(6/fan_in)).
    Kaiming(usize),
    Const(f64),
}

/// Every tensor of the model in creation order. Pure function of the config.
fn layout(cfg: &NetConfig) -> Vec<(String, Vec<usize>, Init)> {
    let mut out = Vec::new();
    let block = |out: &mut Vec<_>, prefix: String, cin: usize, cout: usize| {
        out.push((
            format!("{prefix}.conv.weight"),
            vec![cout, cin, 3, 3],
            Init::Kaiming(cin * 9),
        ));
        out.push((format!("{prefix}.conv.bias"), vec![cout], Init::Const(0.0)));
        out.push((format!("{prefix}.bn.weight"), vec![cout], Init::Const(1.0)));
        out.push((format!("{prefix}.bn.bias"), vec![cout], Init::Const(0.0)));
        out.push((format!("{prefix}.bn.running_mean"), vec![cout], Init::Const(0.0)));
        out.push((format!("{prefix}.bn.running_var"), vec![cout], Init::Const(1.0)));
    };
    let mut cin = cfg.input_depth();
    for level in 1..=cfg.levels {
        let d = cfg.depth(level);
        block(&mut out, format!("enc.{level}"), cin, d);
        cin = d;
    }
    if cfg.variant == Variant::UnetLstm {
        for level in 1..=cfg.levels {
            let d = cfg.depth(level);
            for gate in GATES {
                let p = format!("lstm.{level}.{gate}");
                out.push((format!("{p}.w_x"), vec![d, d, 3, 3], Init::Kaiming(2 * d * 9)));
                out.push((format!("{p}.w_h"), vec![d, d, 3, 3], Init::Kaiming(2 * d * 9)));
                let bias = if gate == "forget" { 1.0 } else { 0.0 };
                out.push((format!("{p}.bias"), vec![d], Init::Const(bias)));
            }
        }
    }
    let top = cfg.levels;
    block(&mut out, format!("dec.{top}"), cfg.depth(top), cfg.depth(top));
    for level in (1..top).rev() {
        let d = cfg.depth(level);
        block(&mut out, format!("dec.{level}"), cfg.depth(level + 1) + d, d);
    }
    out.push((
        "head.weight".into(),
        vec![cfg.num_classes, cfg.depth(1), 1, 1],
        Init::Kaiming(cfg.depth(1)),
    ));
    out.push(("head.bias".into(), vec![cfg.num_classes], Init::Const(0.0)));
    out
}

/// Learned weights plus batch-norm running statistics, keyed by
/// `<stage>.<level>.<role>` (see README for the full scheme).
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<S> {
    config: NetConfig,
    seed: u64,
    tensors: BTreeMap<String, Tensor<S>>,
}

/// Deterministically initialised parameters for `config`.
pub fn build<S: Scalar>(config: &NetConfig, seed: u64) -> Result<ModelParams<S>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tensors = BTreeMap::new();
    for (key, shape, init) in layout(config) {
        let n: usize = shape.iter().product();
        let data = match init {
            Init::Kaiming(fan_in) => {
                let bound = (6.0 / fan_in as f64).sqrt();
                (0..n).map(|_| S::of(rng.gen_range(-bound..bound))).collect()
            }
            Init::Const(v) => vec![S::of(v); n],
        };
        tensors.insert(key, Tensor::new(&shape, data)?);
    }
    Ok(ModelParams {
        config: config.clone(),
        seed,
        tensors,
    })
}

impl<S: Scalar> ModelParams<S> {
    /// Reassemble from stored tensors; the key set and shapes must match the config.
    pub fn from_tensors(config: NetConfig, seed: u64, tensors: BTreeMap<String, Tensor<S>>) -> Result<Self> {
        config.validate()?;
        let expected = layout(&config);
        if expected.len() != tensors.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} tensors, found {}",
                expected.len(),
                tensors.len()
            )));
        }
        for (key, shape, _) in &expected {
            match tensors.get(key) {
                Some(t) if t.shape() == shape.as_slice() => {}
                Some(t) => {
                    return Err(Error::Checkpoint(format!(
                        "{key}: shape {:?}, expected {shape:?}",
                        t.shape()
                    )))
                }
                None => return Err(Error::Checkpoint(format!("missing tensor {key}"))),
            }
        }
        Ok(Self { config, seed, tensors })
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn get(&self, key: &str) -> Result<&Tensor<S>> {
        self.tensors
            .get(key)
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor {key}")))
    }

    pub fn get_mut(&mut self, key: &str) -> Option<&mut Tensor<S>> {
        self.tensors.get_mut(key)
    }

    pub fn tensors(&self) -> &BTreeMap<String, Tensor<S>> {
        &self.tensors
    }

    pub fn is_trainable(key: &str) -> bool {
        !(key.ends_with(".running_mean") || key.ends_with(".running_var"))
    }

    pub fn trainable_keys(&self) -> impl Iterator<Item = &str> {
        self.tensors
            .keys()
            .map(String::as_str)
            .filter(|k| Self::is_trainable(k))
    }

    /// Number of learnable scalars (running statistics excluded).
    pub fn parameter_count(&self) -> usize {
        self.tensors
            .iter()
            .filter(|(k, _)| Self::is_trainable(k))
            .map(|(_, t)| t.numel())
            .sum()
    }

    pub fn cast<T: Scalar>(&self) -> ModelParams<T> {
        ModelParams {
            config: self.config.clone(),
            seed: self.seed,
            tensors: self.tensors.iter().map(|(k, t)| (k.clone(), t.cast())).collect(),
        }
    }

    /// Little-endian bytes of every tensor in key order.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for t in self.tensors.values() {
            for v in t.data() {
                if S::DTYPE == "F32" {
                    out.extend((v.f64() as f32).to_le_bytes());
                } else {
                    out.extend(v.f64().to_le_bytes());
                }
            }
        }
        out
    }

    /// Blend batch moments into the running statistics:
    /// `running = (1 - momentum) * running + momentum * batch`.
    pub fn update_running_stats(&mut self, moments: &[(String, BatchMoments)], momentum: f64) -> Result<()> {
        for (prefix, m) in moments {
            for (suffix, values) in [("running_mean", &m.mean), ("running_var", &m.var)] {
                let key = format!("{prefix}.{suffix}");
                let t = self
                    .tensors
                    .get_mut(&key)
                    .ok_or_else(|| Error::Checkpoint(format!("missing tensor {key}")))?;
                for (r, &b) in t.data_mut().iter_mut().zip(values) {
                    *r = S::of((1.0 - momentum) * r.f64() + momentum * b);
                }
            }
        }
        Ok(())
    }
}
