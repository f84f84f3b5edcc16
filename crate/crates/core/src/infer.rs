//! Tiled whole-scene prediction, ensemble averaging, thresholding, metrics and
//! comparison rendering.

use std::fs;
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::{forward_batch, Mode, ModelParams};
use crate::raster::{ChangeMask, Scene};
use crate::sampler::{normalize_scene, PatchSet};
use crate::tensor::Tensor;
use crate::train::Checkpoint;

pub const TP_COLOR: [u8; 3] = [255, 255, 255];
pub const TN_COLOR: [u8; 3] = [0, 0, 0];
pub const FP_COLOR: [u8; 3] = [255, 0, 0];
pub const FN_COLOR: [u8; 3] = [0, 255, 0];

/// Per-pixel probability of the change class.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbabilityMap {
    height: usize,
    width: usize,
    p_change: Vec<f32>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MapSidecar {
    height: usize,
    width: usize,
    dtype: String,
}

impl ProbabilityMap {
    pub fn new(height: usize, width: usize, p_change: Vec<f32>) -> Result<Self> {
        if p_change.len() != height * width {
            return Err(Error::Shape(format!(
                "{} probabilities for a {height}x{width} map",
                p_change.len()
            )));
        }
        if let Some(p) = p_change.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::InvalidArgument(format!("probability {p} outside [0, 1]")));
        }
        Ok(Self {
            height,
            width,
            p_change,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[f32] {
        &self.p_change
    }

    fn sidecar_path(path: &Path) -> PathBuf {
        path.with_extension("json")
    }

    /// Raw little-endian f32 at `path` plus `{height, width, dtype}` beside it
    /// with a `.json` extension.
    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes: Vec<u8> = self.p_change.iter().flat_map(|v| v.to_le_bytes()).collect();
        fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
        let side = Self::sidecar_path(path);
        let meta = MapSidecar {
            height: self.height,
            width: self.width,
            dtype: "f32le".into(),
        };
        let mut text = serde_json::to_string_pretty(&meta)?;
        text.push('\n');
        fs::write(&side, text).map_err(|e| Error::io(side, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let side = Self::sidecar_path(path);
        let text = fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
        let meta: MapSidecar = serde_json::from_str(&text)?;
        if meta.dtype != "f32le" {
            return Err(Error::InvalidArgument(format!("unsupported dtype {}", meta.dtype)));
        }
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        if bytes.len() != meta.height * meta.width * 4 {
            return Err(Error::Shape(format!(
                "{} bytes for a {}x{} f32 map",
                bytes.len(),
                meta.height,
                meta.width
            )));
        }
        let values = bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        Self::new(meta.height, meta.width, values)
    }
}

fn default_tile() -> usize {
    32
}
fn default_tile_stride() -> usize {
    16
}
fn default_batch() -> usize {
    16
}
fn default_threshold() -> f64 {
    0.5
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TileOptions {
    #[serde(default = "default_tile")]
    pub tile: usize,
    #[serde(default = "default_tile_stride")]
    pub tile_stride: usize,
    /// Tiles per forward pass. Does not affect results.
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
}

impl Default for TileOptions {
    fn default() -> Self {
        Self {
            tile: default_tile(),
            tile_stride: default_tile_stride(),
            batch_size: default_batch(),
            threshold: default_threshold(),
        }
    }
}

/// Tile origins along one axis: every multiple of `stride`, with the last
/// tile snapped flush to the edge.
pub fn tile_origins(extent: usize, tile: usize, stride: usize) -> Vec<usize> {
    let mut out: Vec<usize> = (0..=extent - tile).step_by(stride).collect();
    if out.last() != Some(&(extent - tile)) {
        out.push(extent - tile);
    }
    out
}

/// Change probabilities of one model over every tile, averaged by coverage.
fn predict_single(params: &ModelParams<f32>, scene_px: &[f32], scene: &Scene, opts: &TileOptions) -> Result<Vec<f64>> {
    let (t, c, h, w) = (scene.num_dates(), scene.num_bands(), scene.height(), scene.width());
    let k = opts.tile;
    let rows = tile_origins(h, k, opts.tile_stride);
    let cols = tile_origins(w, k, opts.tile_stride);
    let tiles: Vec<(usize, usize)> = rows.iter().flat_map(|&r| cols.iter().map(move |&c| (r, c))).collect();
    let mut acc = vec![0f64; h * w];
    let mut cover = vec![0u32; h * w];
    for chunk in tiles.chunks(opts.batch_size.max(1)) {
        let mut data = Vec::with_capacity(chunk.len() * t * c * k * k);
        for &(r0, c0) in chunk {
            for plane in 0..t * c {
                for r in r0..r0 + k {
                    let start = plane * h * w + r * w + c0;
                    data.extend_from_slice(&scene_px[start..start + k]);
                }
            }
        }
        let input = Tensor::new(&[chunk.len(), t, c, k, k], data)?;
        let probs = forward_batch(params, &input, Mode::Eval)?;
        let classes = probs.dim(1);
        for (i, &(r0, c0)) in chunk.iter().enumerate() {
            let base = (i * classes + 1) * k * k;
            for r in 0..k {
                for cc in 0..k {
                    let idx = (r0 + r) * w + c0 + cc;
                    acc[idx] += probs.data()[base + r * k + cc] as f64;
                    cover[idx] += 1;
                }
            }
        }
    }
    Ok(acc.iter().zip(&cover).map(|(a, &n)| a / n as f64).collect())
}

/// Ensemble change probability for a whole scene.
///
/// Each checkpoint's map is the coverage-weighted mean over overlapping tiles;
/// the ensemble takes the uniform mean of those maps. Per pixel the member
/// values are summed in sorted order, so the result does not depend on the
/// order of `checkpoints`.
pub fn predict_scene(checkpoints: &[Checkpoint], scene: &Scene, opts: &TileOptions) -> Result<ProbabilityMap> {
    let first = checkpoints
        .first()
        .ok_or_else(|| Error::InvalidArgument("empty checkpoint list".into()))?;
    for ck in &checkpoints[1..] {
        if ck.params.config() != first.params.config() {
            return Err(Error::ConfigMismatch("checkpoints disagree on net config".into()));
        }
        if ck.band_stats != first.band_stats {
            return Err(Error::ConfigMismatch("checkpoints disagree on band statistics".into()));
        }
    }
    let (h, w) = (scene.height(), scene.width());
    if opts.tile == 0 || opts.tile_stride == 0 || opts.tile_stride > opts.tile {
        return Err(Error::InvalidArgument(format!(
            "tile {} with stride {}",
            opts.tile, opts.tile_stride
        )));
    }
    if h < opts.tile || w < opts.tile {
        return Err(Error::SceneTooSmall {
            scene: scene.id().to_string(),
            height: h,
            width: w,
            size: opts.tile,
        });
    }
    let px = normalize_scene(scene, &first.band_stats)?;
    let maps = checkpoints
        .iter()
        .map(|ck| predict_single(&ck.params, &px, scene, opts))
        .collect::<Result<Vec<_>>>()?;
    let n = maps.len() as f64;
    let mut column = vec![0f64; maps.len()];
    let mut out = Vec::with_capacity(h * w);
    for i in 0..h * w {
        for (slot, m) in column.iter_mut().zip(&maps) {
            *slot = m[i];
        }
        column.sort_by(f64::total_cmp);
        let mean = column.iter().sum::<f64>() / n;
        out.push(mean.clamp(0.0, 1.0) as f32);
    }
    ProbabilityMap::new(h, w, out)
}

/// Change probabilities for every patch of a set, `N * P * P`, in eval mode.
pub fn predict_patches(params: &ModelParams<f32>, ps: &PatchSet, batch_size: usize) -> Result<Vec<f32>> {
    let p = ps.patch_size();
    let mut out = Vec::with_capacity(ps.len() * p * p);
    for chunk in ps.patches.chunks(batch_size.max(1)) {
        let data: Vec<f32> = chunk.iter().flat_map(|x| x.pixels.iter().copied()).collect();
        let input = Tensor::new(&[chunk.len(), ps.num_dates, ps.num_bands, p, p], data)?;
        let probs = forward_batch(params, &input, Mode::Eval)?;
        let k = probs.dim(1);
        for i in 0..chunk.len() {
            let base = (i * k + 1) * p * p;
            out.extend_from_slice(&probs.data()[base..base + p * p]);
        }
    }
    Ok(out)
}

/// Label 1 where `p_change > tau` (strictly).
pub fn threshold(pm: &ProbabilityMap, tau: f64) -> Result<ChangeMask> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::InvalidArgument(format!("threshold {tau} outside (0, 1)")));
    }
    let labels = pm.p_change.iter().map(|&p| u8::from(p as f64 > tau)).collect();
    ChangeMask::new(pm.height, pm.width, labels)
}

/// Confusion counts and change-class scores.
///
/// With no positive predictions precision is reported as 0 and
/// `precision_undefined` is set; likewise recall when the ground truth has
/// no change pixels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub overall_accuracy: f64,
    pub precision_undefined: bool,
    pub recall_undefined: bool,
}

impl MetricsReport {
    pub fn from_counts(tp: u64, fp: u64, fn_: u64, tn: u64) -> Self {
        let ratio = |a: u64, b: u64| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Self {
            tp,
            fp,
            fn_,
            tn,
            precision,
            recall,
            f1,
            overall_accuracy: ratio(tp + tn, tp + fp + fn_ + tn),
            precision_undefined: tp + fp == 0,
            recall_undefined: tp + fn_ == 0,
        }
    }

    /// Tally predicted against true labels pixel by pixel.
    pub fn from_labels(pred: &[u8], truth: &[u8]) -> Result<Self> {
        if pred.len() != truth.len() {
            return Err(Error::Shape(format!(
                "{} predictions for {} labels",
                pred.len(),
                truth.len()
            )));
        }
        let mut n = [[0u64; 2]; 2];
        for (&p, &t) in pred.iter().zip(truth) {
            n[(p == 1) as usize][(t == 1) as usize] += 1;
        }
        Ok(Self::from_counts(n[1][1], n[1][0], n[0][1], n[0][0]))
    }

    /// Pool the confusion counts of several reports.
    pub fn pooled<'a>(reports: impl IntoIterator<Item = &'a MetricsReport>) -> Self {
        let (mut tp, mut fp, mut fn_, mut tn) = (0, 0, 0, 0);
        for r in reports {
            tp += r.tp;
            fp += r.fp;
            fn_ += r.fn_;
            tn += r.tn;
        }
        Self::from_counts(tp, fp, fn_, tn)
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

fn same_shape(a: &ChangeMask, b: &ChangeMask) -> Result<()> {
    if (a.height(), a.width()) != (b.height(), b.width()) {
        return Err(Error::Shape(format!(
            "prediction {}x{} vs ground truth {}x{}",
            a.height(),
            a.width(),
            b.height(),
            b.width()
        )));
    }
    Ok(())
}

pub fn evaluate(pred: &ChangeMask, gt: &ChangeMask) -> Result<MetricsReport> {
    same_shape(pred, gt)?;
    MetricsReport::from_labels(pred.labels(), gt.labels())
}

/// TP white, TN black, FP red, FN green.
pub fn render_comparison(pred: &ChangeMask, gt: &ChangeMask) -> Result<RgbImage> {
    same_shape(pred, gt)?;
    let (h, w) = (pred.height(), pred.width());
    Ok(RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let (r, c) = (y as usize, x as usize);
        Rgb(match (pred.get(r, c), gt.get(r, c)) {
            (1, 1) => TP_COLOR,
            (0, 0) => TN_COLOR,
            (1, _) => FP_COLOR,
            _ => FN_COLOR,
        })
    }))
}

pub fn save_png(img: &RgbImage, path: &Path) -> Result<()> {
    img.save_with_format(path, image::ImageFormat::Png)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn worked_metrics_example() {
        let m = MetricsReport::from_counts(50, 10, 25, 915);
        assert!((m.precision - 0.8333).abs() < 1e-4);
        assert!((m.recall - 0.6667).abs() < 1e-4);
        assert!((m.f1 - 0.7407).abs() < 1e-4);
        assert!((m.overall_accuracy - 0.9650).abs() < 1e-4);
    }

    #[test]
    fn undefined_precision_is_flagged() {
        let m = MetricsReport::from_counts(0, 0, 5, 95);
        assert!(m.precision_undefined);
        assert_eq!((m.precision, m.recall, m.f1), (0.0, 0.0, 0.0));
        assert_eq!(m.overall_accuracy, 0.95);
    }

    #[test]
    fn tile_origins_snap_to_edge() {
        assert_eq!(tile_origins(32, 32, 16), vec![0]);
        assert_eq!(tile_origins(48, 32, 16), vec![0, 16]);
        assert_eq!(tile_origins(50, 32, 16), vec![0, 16, 18]);
        assert_eq!(tile_origins(64, 32, 32), vec![0, 32]);
    }

    #[test]
    fn threshold_is_strict() {
        let pm = ProbabilityMap::new(1, 3, vec![0.5, 0.5001, 0.0]).unwrap();
        assert_eq!(threshold(&pm, 0.5).unwrap().labels(), &[0, 1, 0]);
        assert!(threshold(&pm, 1.0).is_err());
        assert!(ProbabilityMap::new(1, 1, vec![1.5]).is_err());
    }
}
