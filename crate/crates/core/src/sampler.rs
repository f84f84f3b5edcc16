//! Training patch inventory: dual-stride window extraction, dihedral
//! augmentation, inverse-frequency class weights and band normalization.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{BandStats, ChangeMask, Scene};

pub const PATCHES_BIN: &str = "patches.bin";
pub const LABELS_BIN: &str = "labels.bin";
pub const PATCHES_JSON: &str = "patches.json";

/// Lower bound on the standard deviation used by [`normalize`].
pub const NORM_EPS: f64 = 1e-6;

/// Number of elements of the dihedral group of the square.
pub const DIHEDRAL_ORDER: u8 = 8;

fn default_patch_size() -> usize {
    32
}
fn default_stride_change() -> usize {
    6
}
fn default_stride_nochange() -> usize {
    32
}
fn default_aug_threshold() -> f64 {
    0.05
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerConfig {
    #[serde(default = "default_patch_size")]
    pub patch_size: usize,
    /// Grid stride for windows that contain change.
    #[serde(default = "default_stride_change")]
    pub stride_change: usize,
    /// Grid stride for windows without change.
    #[serde(default = "default_stride_nochange")]
    pub stride_nochange: usize,
    /// Patches whose change fraction strictly exceeds this are augmented.
    #[serde(default = "default_aug_threshold")]
    pub aug_threshold: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            patch_size: default_patch_size(),
            stride_change: default_stride_change(),
            stride_nochange: default_stride_nochange(),
            aug_threshold: default_aug_threshold(),
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        let p = self.patch_size;
        for (name, s) in [
            ("stride_change", self.stride_change),
            ("stride_nochange", self.stride_nochange),
        ] {
            if s == 0 || s > p {
                return Err(Error::InvalidArgument(format!("{name} {s} outside [1, {p}]")));
            }
        }
        if !(0.0..=1.0).contains(&self.aug_threshold) {
            return Err(Error::InvalidArgument(format!(
                "aug_threshold {} outside [0, 1]",
                self.aug_threshold
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PatchOrigin {
    pub scene_id: String,
    pub row: usize,
    pub col: usize,
    /// Dihedral element applied to the window, `0` is the identity.
    pub transform_id: u8,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Patch {
    pub origin: PatchOrigin,
    /// Normalized values, `[T, C, P, P]` row-major.
    pub pixels: Vec<f32>,
    /// `P * P` labels in `{0, 1}`.
    pub labels: Vec<u8>,
}

impl Patch {
    pub fn change_count(&self) -> usize {
        self.labels.iter().filter(|&&l| l == 1).count()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub no_change: u64,
    pub change: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PatchSet {
    pub config: SamplerConfig,
    pub band_stats: BandStats,
    pub num_dates: usize,
    pub num_bands: usize,
    pub patches: Vec<Patch>,
    pub class_counts: ClassCounts,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassWeights {
    pub w_nochange: f64,
    pub w_change: f64,
}

impl ClassWeights {
    pub const UNIFORM: ClassWeights = ClassWeights {
        w_nochange: 1.0,
        w_change: 1.0,
    };

    /// `[w_nochange, w_change]`, indexed by label.
    pub fn as_vec(&self) -> Vec<f64> {
        vec![self.w_nochange, self.w_change]
    }
}

pub fn count_classes<'a>(patches: impl IntoIterator<Item = &'a Patch>) -> ClassCounts {
    let mut counts = ClassCounts::default();
    for p in patches {
        let change = p.change_count() as u64;
        counts.change += change;
        counts.no_change += p.labels.len() as u64 - change;
    }
    counts
}

impl PatchSet {
    pub fn patch_size(&self) -> usize {
        self.config.patch_size
    }

    pub fn len(&self) -> usize {
        self.patches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patches.is_empty()
    }

    /// Values per patch: `T * C * P * P`.
    pub fn patch_len(&self) -> usize {
        self.num_dates * self.num_bands * self.patch_size() * self.patch_size()
    }

    /// Subset by index, in the given order.
    pub fn select(&self, indices: &[usize]) -> PatchSet {
        let patches: Vec<Patch> = indices.iter().map(|&i| self.patches[i].clone()).collect();
        PatchSet {
            config: self.config.clone(),
            band_stats: self.band_stats.clone(),
            num_dates: self.num_dates,
            num_bands: self.num_bands,
            class_counts: count_classes(&patches),
            patches,
        }
    }

    /// Concatenate sets with identical layout and sort by origin.
    pub fn merge(sets: Vec<PatchSet>) -> Result<PatchSet> {
        let mut iter = sets.into_iter();
        let mut out = iter
            .next()
            .ok_or_else(|| Error::InvalidArgument("merging zero patch sets".into()))?;
        for s in iter {
            if s.config != out.config
                || s.band_stats != out.band_stats
                || s.num_dates != out.num_dates
                || s.num_bands != out.num_bands
            {
                return Err(Error::Shape("patch sets differ in layout or statistics".into()));
            }
            out.patches.extend(s.patches);
        }
        out.patches.sort_by(|a, b| a.origin.cmp(&b.origin));
        out.class_counts = count_classes(&out.patches);
        Ok(out)
    }
}

/// Standardize raw counts of one band: `(x - mean) / max(std, 1e-6)`.
pub fn normalize(raw: &[u16], band: &str, stats: &BandStats) -> Result<Vec<f32>> {
    let s = stats.get(band)?;
    let scale = s.std.max(NORM_EPS);
    Ok(raw.iter().map(|&x| ((x as f64 - s.mean) / scale) as f32).collect())
}

/// Whole scene normalized to `[T, C, H, W]`.
pub fn normalize_scene(scene: &Scene, stats: &BandStats) -> Result<Vec<f32>> {
    let mut out = Vec::with_capacity(scene.num_dates() * scene.num_bands() * scene.height() * scene.width());
    for date in scene.rasters() {
        for (b, raster) in date.iter().enumerate() {
            out.extend(normalize(raster.values(), &scene.manifest().band_names[b], stats)?);
        }
    }
    Ok(out)
}

fn grid(extent: usize, patch: usize, stride: usize) -> impl Iterator<Item = usize> {
    (0..=extent - patch).step_by(stride)
}

/// Top-left corners of the extracted windows, sorted by `(row, col)`.
pub fn window_origins(mask: &ChangeMask, cfg: &SamplerConfig) -> Result<Vec<(usize, usize)>> {
    cfg.validate()?;
    let (h, w, p) = (mask.height(), mask.width(), cfg.patch_size);
    if h < p || w < p {
        return Err(Error::InvalidArgument(format!(
            "mask {h}x{w} smaller than patch size {p}"
        )));
    }
    // Summed-area table for O(1) window change counts.
    let mut sat = vec![0u32; (h + 1) * (w + 1)];
    for r in 0..h {
        for c in 0..w {
            sat[(r + 1) * (w + 1) + c + 1] =
                mask.get(r, c) as u32 + sat[r * (w + 1) + c + 1] + sat[(r + 1) * (w + 1) + c] - sat[r * (w + 1) + c];
        }
    }
    let count = |r: usize, c: usize| {
        sat[(r + p) * (w + 1) + c + p] + sat[r * (w + 1) + c] - sat[r * (w + 1) + c + p] - sat[(r + p) * (w + 1) + c]
    };
    let mut set = BTreeSet::new();
    for r in grid(h, p, cfg.stride_change) {
        for c in grid(w, p, cfg.stride_change) {
            if count(r, c) > 0 {
                set.insert((r, c));
            }
        }
    }
    for r in grid(h, p, cfg.stride_nochange) {
        for c in grid(w, p, cfg.stride_nochange) {
            if count(r, c) == 0 {
                set.insert((r, c));
            }
        }
    }
    Ok(set.into_iter().collect())
}

/// Cut every selected window of a masked scene into a normalized patch.
pub fn extract_patches(scene: &Scene, cfg: &SamplerConfig, stats: &BandStats) -> Result<PatchSet> {
    let mask = scene.mask().ok_or_else(|| Error::MissingMask(scene.id().to_string()))?;
    let p = cfg.patch_size;
    if scene.height() < p || scene.width() < p {
        return Err(Error::SceneTooSmall {
            scene: scene.id().to_string(),
            height: scene.height(),
            width: scene.width(),
            size: p,
        });
    }
    let origins = window_origins(mask, cfg)?;
    let full = normalize_scene(scene, stats)?;
    let (h, w) = (scene.height(), scene.width());
    let planes = scene.num_dates() * scene.num_bands();
    let mut patches = Vec::with_capacity(origins.len());
    for (r0, c0) in origins {
        let mut pixels = Vec::with_capacity(planes * p * p);
        for plane in 0..planes {
            for r in r0..r0 + p {
                let start = plane * h * w + r * w + c0;
                pixels.extend_from_slice(&full[start..start + p]);
            }
        }
        let mut labels = Vec::with_capacity(p * p);
        for r in r0..r0 + p {
            labels.extend_from_slice(&mask.labels()[r * w + c0..r * w + c0 + p]);
        }
        patches.push(Patch {
            origin: PatchOrigin {
                scene_id: scene.id().to_string(),
                row: r0,
                col: c0,
                transform_id: 0,
            },
            pixels,
            labels,
        });
    }
    Ok(PatchSet {
        config: cfg.clone(),
        band_stats: stats.clone(),
        num_dates: scene.num_dates(),
        num_bands: scene.num_bands(),
        class_counts: count_classes(&patches),
        patches,
    })
}

/// Source coordinates read by element `id` at destination `(r, c)` of an
/// `n x n` grid: `dst[r][c] = src[map(r, c)]`.
///
/// 0 identity, 1-3 counter-clockwise rotations by 90/180/270 degrees,
/// 4 left-right mirror, 5 up-down mirror, 6 transpose, 7 anti-transpose.
pub fn dihedral_source(id: u8, n: usize, r: usize, c: usize) -> (usize, usize) {
    let m = n - 1;
    match id {
        0 => (r, c),
        1 => (c, m - r),
        2 => (m - r, m - c),
        3 => (m - c, r),
        4 => (r, m - c),
        5 => (m - r, c),
        6 => (c, r),
        7 => (m - c, m - r),
        _ => panic!("dihedral element {id} out of range"),
    }
}

pub fn dihedral_inverse(id: u8) -> u8 {
    match id {
        1 => 3,
        3 => 1,
        other => other,
    }
}

/// Apply element `id` to every `n x n` plane of `data`.
pub fn dihedral<T: Copy>(id: u8, data: &[T], n: usize) -> Vec<T> {
    let plane = n * n;
    let mut out = Vec::with_capacity(data.len());
    for chunk in data.chunks_exact(plane) {
        for r in 0..n {
            for c in 0..n {
                let (sr, sc) = dihedral_source(id, n, r, c);
                out.push(chunk[sr * n + sc]);
            }
        }
    }
    out
}

/// Add the seven non-identity dihedral variants of every untransformed patch
/// whose change fraction exceeds the threshold.
pub fn augment(ps: &PatchSet, cfg: &SamplerConfig) -> PatchSet {
    let n = ps.patch_size();
    let mut patches = Vec::with_capacity(ps.patches.len());
    for patch in &ps.patches {
        patches.push(patch.clone());
        let frac = patch.change_count() as f64 / patch.labels.len() as f64;
        if patch.origin.transform_id != 0 || frac <= cfg.aug_threshold {
            continue;
        }
        for id in 1..DIHEDRAL_ORDER {
            patches.push(Patch {
                origin: PatchOrigin {
                    transform_id: id,
                    ..patch.origin.clone()
                },
                pixels: dihedral(id, &patch.pixels, n),
                labels: dihedral(id, &patch.labels, n),
            });
        }
    }
    PatchSet {
        config: ps.config.clone(),
        band_stats: ps.band_stats.clone(),
        num_dates: ps.num_dates,
        num_bands: ps.num_bands,
        class_counts: count_classes(&patches),
        patches,
    }
}

/// Weights proportional to inverse class frequency, scaled to sum to 2.
pub fn compute_class_weights(ps: &PatchSet) -> Result<ClassWeights> {
    class_weights_from_counts(count_classes(&ps.patches))
}

pub fn class_weights_from_counts(counts: ClassCounts) -> Result<ClassWeights> {
    if counts.no_change == 0 || counts.change == 0 {
        return Err(Error::DegenerateClassBalance(format!(
            "no_change={}, change={}",
            counts.no_change, counts.change
        )));
    }
    let inv0 = 1.0 / counts.no_change as f64;
    let inv1 = 1.0 / counts.change as f64;
    let z = inv0 + inv1;
    Ok(ClassWeights {
        w_nochange: 2.0 * inv0 / z,
        w_change: 2.0 * inv1 / z,
    })
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PatchIndex {
    config: SamplerConfig,
    band_stats: BandStats,
    num_dates: usize,
    num_bands: usize,
    patch_size: usize,
    class_counts: ClassCounts,
    origins: Vec<PatchOrigin>,
}

/// Write `patches.bin` (f32 LE pixels), `labels.bin` (u8) and `patches.json`.
pub fn save_patch_set(ps: &PatchSet, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut pixels = Vec::with_capacity(ps.len() * ps.patch_len() * 4);
    let mut labels = Vec::with_capacity(ps.len() * ps.patch_size() * ps.patch_size());
    for p in &ps.patches {
        for v in &p.pixels {
            pixels.extend(v.to_le_bytes());
        }
        labels.extend_from_slice(&p.labels);
    }
    let index = PatchIndex {
        config: ps.config.clone(),
        band_stats: ps.band_stats.clone(),
        num_dates: ps.num_dates,
        num_bands: ps.num_bands,
        patch_size: ps.patch_size(),
        class_counts: ps.class_counts,
        origins: ps.patches.iter().map(|p| p.origin.clone()).collect(),
    };
    let write = |name: &str, bytes: &[u8]| {
        let path = dir.join(name);
        fs::write(&path, bytes).map_err(|e| Error::io(path, e))
    };
    write(PATCHES_BIN, &pixels)?;
    write(LABELS_BIN, &labels)?;
    let mut text = serde_json::to_string_pretty(&index)?;
    text.push('\n');
    write(PATCHES_JSON, text.as_bytes())
}

pub fn load_patch_set(dir: &Path) -> Result<PatchSet> {
    let read = |name: &str| {
        let path = dir.join(name);
        fs::read(&path).map_err(|e| Error::io(path, e))
    };
    let index: PatchIndex = serde_json::from_slice(&read(PATCHES_JSON)?)?;
    if index.patch_size != index.config.patch_size {
        return Err(Error::Shape("patch_size disagrees with config".into()));
    }
    let pixels = read(PATCHES_BIN)?;
    let labels = read(LABELS_BIN)?;
    let n = index.origins.len();
    let pp = index.patch_size * index.patch_size;
    let plen = index.num_dates * index.num_bands * pp;
    if pixels.len() != n * plen * 4 || labels.len() != n * pp {
        return Err(Error::Shape(format!(
            "{n} patches need {} pixel bytes and {} label bytes, found {} and {}",
            n * plen * 4,
            n * pp,
            pixels.len(),
            labels.len()
        )));
    }
    if labels.iter().any(|&l| l > 1) {
        return Err(Error::MaskInvalid("patch labels outside {0, 1}".into()));
    }
    let patches: Vec<Patch> = index
        .origins
        .into_iter()
        .enumerate()
        .map(|(i, origin)| Patch {
            origin,
            pixels: pixels[i * plen * 4..(i + 1) * plen * 4]
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect(),
            labels: labels[i * pp..(i + 1) * pp].to_vec(),
        })
        .collect();
    let counts = count_classes(&patches);
    if counts != index.class_counts {
        return Err(Error::Shape("class_counts disagree with labels".into()));
    }
    Ok(PatchSet {
        config: index.config,
        band_stats: index.band_stats,
        num_dates: index.num_dates,
        num_bands: index.num_bands,
        patches,
        class_counts: counts,
    })
}
