//! Weighted cross-entropy training with Adam, k-fold partitioning and
//! ensemble training.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::infer::{predict_patches, MetricsReport};
use crate::net::graph::PROB_FLOOR;
use crate::net::{archive, build, gradients, Batch, LossSpec, ModelParams, NetConfig, BN_MOMENTUM};
use crate::raster::BandStats;
use crate::sampler::{compute_class_weights, ClassWeights, PatchSet};
use crate::tensor::{Scalar, Tensor};

fn default_batch_size() -> usize {
    64
}
fn default_learning_rate() -> f64 {
    1e-4
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_adam_eps() -> f64 {
    1e-8
}
fn default_epochs() -> usize {
    30
}
fn default_folds() -> usize {
    5
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_adam_eps")]
    pub adam_eps: f64,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default)]
    pub seed: u64,
    /// Computed from the training patches when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class_weights: Option<ClassWeights>,
    #[serde(default = "default_folds")]
    pub folds: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: default_batch_size(),
            learning_rate: default_learning_rate(),
            beta1: default_beta1(),
            beta2: default_beta2(),
            adam_eps: default_adam_eps(),
            epochs: default_epochs(),
            seed: 0,
            class_weights: None,
            folds: default_folds(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(format!("train config: {m}")));
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate {}", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad(format!("betas ({}, {}) outside [0, 1)", self.beta1, self.beta2));
        }
        if !(self.adam_eps > 0.0) {
            return bad(format!("adam_eps {}", self.adam_eps));
        }
        if self.folds < 2 {
            return bad(format!("folds {} < 2", self.folds));
        }
        if let Some(w) = self.class_weights {
            if !(w.w_change > 0.0 && w.w_nochange > 0.0) {
                return bad(format!("class weights {w:?} must be positive"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WeightedLoss {
    pub value: f64,
    /// Pixels whose labelled-class probability fell below the `1e-12` floor.
    pub clamped_pixels: usize,
}

/// Mean over pixels of `w[y] * -ln(max(p[y], 1e-12))` for probabilities
/// `[K, H, W]` and labels `H * W`.
pub fn weighted_loss<S: Scalar>(probs: &Tensor<S>, labels: &[u8], weights: &ClassWeights) -> Result<WeightedLoss> {
    if probs.rank() != 3 || probs.dim(0) != 2 {
        return Err(Error::Shape(format!(
            "expected [2, H, W] probabilities, got {:?}",
            probs.shape()
        )));
    }
    let hw = probs.dim(1) * probs.dim(2);
    if labels.len() != hw {
        return Err(Error::Shape(format!("{} labels for {hw} pixels", labels.len())));
    }
    let w = weights.as_vec();
    let mut sum = 0.0;
    let mut clamped = 0;
    for (i, &y) in labels.iter().enumerate() {
        let y = y as usize;
        if y > 1 {
            return Err(Error::MaskInvalid(format!("label {y}")));
        }
        let p = probs.data()[y * hw + i].f64();
        if p < PROB_FLOOR {
            clamped += 1;
        }
        sum += w[y] * -p.max(PROB_FLOOR).ln();
    }
    Ok(WeightedLoss {
        value: sum / hw as f64,
        clamped_pixels: clamped,
    })
}

/// Adam with bias correction. State is keyed like the parameters.
#[derive(Clone, Debug)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: BTreeMap<String, Vec<f64>>,
    v: BTreeMap<String, Vec<f64>>,
}

impl Adam {
    pub fn new(cfg: &TrainConfig) -> Self {
        Self {
            learning_rate: cfg.learning_rate,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.adam_eps,
            step: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// `p -= lr * m_hat / (sqrt(v_hat) + eps)` for every gradient.
    pub fn update<S: Scalar>(
        &mut self,
        params: &mut ModelParams<S>,
        grads: &BTreeMap<String, Tensor<S>>,
    ) -> Result<()> {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (key, g) in grads {
            let p = params
                .get_mut(key)
                .ok_or_else(|| Error::Checkpoint(format!("gradient for unknown tensor {key}")))?;
            let m = self.m.entry(key.clone()).or_insert_with(|| vec![0.0; g.numel()]);
            let v = self.v.entry(key.clone()).or_insert_with(|| vec![0.0; g.numel()]);
            for (((pi, &gi), mi), vi) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                let gi = gi.f64();
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                let step = self.learning_rate * (*mi / c1) / ((*vi / c2).sqrt() + self.eps);
                *pi = S::of(pi.f64() - step);
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldRun {
    pub train_folds: Vec<usize>,
    pub held_out: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    /// Fold index of each patch.
    pub assignments: Vec<usize>,
    pub runs: Vec<FoldRun>,
}

impl FoldPlan {
    pub fn fold_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.assignments.len())
            .filter(|&i| self.assignments[i] == fold)
            .collect()
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &a in &self.assignments {
            sizes[a] += 1;
        }
        sizes
    }

    /// Patch indices used for training and held out in run `run`.
    pub fn split(&self, run: usize) -> (Vec<usize>, Vec<usize>) {
        let held = self.runs[run].held_out;
        (0..self.assignments.len()).partition(|&i| self.assignments[i] != held)
    }
}

/// Seeded shuffle of `0..n`, then round-robin: the `j`-th shuffled patch goes
/// to fold `j mod k`. Run `i` holds out fold `i`.
pub fn make_folds(n: usize, k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 2 {
        return Err(Error::InvalidArgument(format!("k = {k} folds")));
    }
    if n < k {
        return Err(Error::InvalidArgument(format!("{n} patches cannot fill {k} folds")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut assignments = vec![0; n];
    for (j, &i) in order.iter().enumerate() {
        assignments[i] = j % k;
    }
    let runs = (0..k)
        .map(|held_out| FoldRun {
            train_folds: (0..k).filter(|&f| f != held_out).collect(),
            held_out,
        })
        .collect();
    Ok(FoldPlan { k, assignments, runs })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean weighted loss over the epoch's training pixels.
    pub loss: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub heldout_f1: Option<f64>,
}

/// Trained parameters with everything needed to reproduce and apply them.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams<f32>,
    pub train_config: TrainConfig,
    pub class_weights: ClassWeights,
    pub band_stats: BandStats,
    pub log: Vec<EpochLog>,
    pub held_out_fold: Option<usize>,
}

impl Checkpoint {
    fn metadata(&self) -> Result<BTreeMap<String, String>> {
        let mut m = BTreeMap::new();
        m.insert("train_config".into(), serde_json::to_string(&self.train_config)?);
        m.insert("class_weights".into(), serde_json::to_string(&self.class_weights)?);
        m.insert("band_stats".into(), serde_json::to_string(&self.band_stats)?);
        m.insert("log".into(), serde_json::to_string(&self.log)?);
        if let Some(f) = self.held_out_fold {
            m.insert("held_out_fold".into(), f.to_string());
        }
        Ok(m)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        archive::encode(&self.params, &self.metadata()?)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (params, meta) = archive::decode::<f32>(bytes)?;
        let field = |k: &str| {
            meta.get(k)
                .ok_or_else(|| Error::Checkpoint(format!("metadata lacks {k}")))
        };
        Ok(Self {
            params,
            train_config: serde_json::from_str(field("train_config")?)?,
            class_weights: serde_json::from_str(field("class_weights")?)?,
            band_stats: serde_json::from_str(field("band_stats")?)?,
            log: serde_json::from_str(field("log")?)?,
            held_out_fold: match meta.get("held_out_fold") {
                Some(s) => Some(
                    s.parse()
                        .map_err(|_| Error::Checkpoint(format!("held_out_fold {s:?}")))?,
                ),
                None => None,
            },
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// One JSON object per epoch: `{"epoch", "loss", "heldout_f1"}`.
    pub fn write_log_jsonl(&self, path: &Path) -> Result<()> {
        let mut out = Vec::new();
        for e in &self.log {
            serde_json::to_writer(&mut out, e)?;
            out.push(b'\n');
        }
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&out).map_err(|e| Error::io(path, e))
    }
}

fn assemble(ps: &PatchSet, idx: &[usize]) -> Result<Batch<f32>> {
    let p = ps.patch_size();
    let mut data = Vec::with_capacity(idx.len() * ps.patch_len());
    let mut labels = Vec::with_capacity(idx.len() * p * p);
    for &i in idx {
        data.extend_from_slice(&ps.patches[i].pixels);
        labels.extend_from_slice(&ps.patches[i].labels);
    }
    Ok(Batch {
        inputs: Tensor::new(&[idx.len(), ps.num_dates, ps.num_bands, p, p], data)?,
        labels,
    })
}

/// Change-class F1 of thresholded (`p > 0.5`) eval-mode predictions.
pub fn patch_metrics(params: &ModelParams<f32>, ps: &PatchSet, batch_size: usize) -> Result<MetricsReport> {
    let probs = predict_patches(params, ps, batch_size)?;
    let pred: Vec<u8> = probs.iter().map(|&p| u8::from(p > 0.5)).collect();
    let truth: Vec<u8> = ps.patches.iter().flat_map(|p| p.labels.iter().copied()).collect();
    MetricsReport::from_labels(&pred, &truth)
}

/// Train `params` for `cfg.epochs` epochs of seeded shuffled mini-batches.
///
/// Each epoch logs the mean training loss and, when `held_out` is given, the
/// held-out change-class F1. Returns the final-epoch state.
pub fn train(
    mut params: ModelParams<f32>,
    train_set: &PatchSet,
    held_out: Option<&PatchSet>,
    cfg: &TrainConfig,
) -> Result<Checkpoint> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::InvalidArgument("empty training set".into()));
    }
    let weights = match cfg.class_weights {
        Some(w) => w,
        None => compute_class_weights(train_set)?,
    };
    let weighting = LossSpec::new(weights.as_vec());
    let mut adam = Adam::new(cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut log = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            let batch = assemble(train_set, idx)?;
            let g = gradients(&params, &batch, &weighting)?;
            if !g.loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: b,
                    value: g.loss,
                });
            }
            total += g.loss * idx.len() as f64;
            adam.update(&mut params, &g.grads)?;
            params.update_running_stats(&g.moments, BN_MOMENTUM)?;
        }
        let heldout_f1 = match held_out {
            Some(h) if !h.is_empty() => Some(patch_metrics(&params, h, cfg.batch_size)?.f1),
            _ => None,
        };
        log.push(EpochLog {
            epoch,
            loss: total / train_set.len() as f64,
            heldout_f1,
        });
    }
    Ok(Checkpoint {
        params,
        train_config: cfg.clone(),
        class_weights: weights,
        band_stats: train_set.band_stats.clone(),
        log,
        held_out_fold: None,
    })
}

/// K-fold ensemble: run `i` initializes and shuffles with `seed + i`,
/// trains on the other folds and logs F1 on fold `i`. The fold plan itself
/// is drawn with `seed`. Class weights come from the whole set unless fixed.
pub fn train_ensemble(net: &NetConfig, ps: &PatchSet, cfg: &TrainConfig) -> Result<(FoldPlan, Vec<Checkpoint>)> {
    cfg.validate()?;
    let plan = make_folds(ps.len(), cfg.folds, cfg.seed)?;
    let weights = match cfg.class_weights {
        Some(w) => w,
        None => compute_class_weights(ps)?,
    };
    let mut out = Vec::with_capacity(plan.k);
    for run in 0..plan.k {
        let seed = cfg.seed.wrapping_add(run as u64);
        let (tr, ho) = plan.split(run);
        let run_cfg = TrainConfig {
            seed,
            class_weights: Some(weights),
            ..cfg.clone()
        };
        let params = build::<f32>(net, seed)?;
        let mut ck = train(params, &ps.select(&tr), Some(&ps.select(&ho)), &run_cfg)?;
        ck.held_out_fold = Some(plan.runs[run].held_out);
        out.push(ck);
    }
    Ok((plan, out))
}
