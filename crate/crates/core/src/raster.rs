//! Multi-date scene storage.
//!
//! A scene directory holds `manifest.json`, one headerless little-endian
//! `u16` raster per (date, band) named `<date>_<band>.raw`, and an optional
//! `mask.raw` with one byte (0 or 1) per pixel. Dimensions live only in the
//! manifest.

use std::fs;
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MASK_FILE: &str = "mask.raw";

/// One channel of one acquisition date, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BandRaster {
    height: usize,
    width: usize,
    values: Vec<u16>,
}

impl BandRaster {
    pub fn new(height: usize, width: usize, values: Vec<u16>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InconsistentRasters(format!("empty raster {height}x{width}")));
        }
        if values.len() != height * width {
            return Err(Error::InconsistentRasters(format!(
                "{height}x{width} raster holds {} values",
                values.len()
            )));
        }
        Ok(Self { height, width, values })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[u16] {
        &self.values
    }

    pub fn get(&self, row: usize, col: usize) -> u16 {
        self.values[row * self.width + col]
    }
}

/// Binary per-pixel change labels: 0 = no change, 1 = change.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ChangeMask {
    height: usize,
    width: usize,
    labels: Vec<u8>,
}

impl ChangeMask {
    pub fn new(height: usize, width: usize, labels: Vec<u8>) -> Result<Self> {
        if labels.len() != height * width {
            return Err(Error::MaskInvalid(format!(
                "{height}x{width} mask holds {} labels",
                labels.len()
            )));
        }
        if let Some(bad) = labels.iter().find(|&&v| v > 1) {
            return Err(Error::MaskInvalid(format!("label value {bad} outside {{0,1}}")));
        }
        Ok(Self { height, width, labels })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            labels: vec![0; height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.labels[row * self.width + col]
    }

    pub fn change_count(&self) -> usize {
        self.labels.iter().filter(|&&v| v == 1).count()
    }

    pub fn write_raw(&self, path: &Path) -> Result<()> {
        fs::write(path, &self.labels).map_err(|e| Error::io(path, e))
    }

    pub fn read_raw(path: &Path, height: usize, width: usize) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        if bytes.len() != height * width {
            return Err(Error::InconsistentRasters(format!(
                "{} has {} bytes, expected {}",
                path.display(),
                bytes.len(),
                height * width
            )));
        }
        Self::new(height, width, bytes)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SceneManifest {
    pub scene_id: String,
    pub dates: Vec<String>,
    pub band_names: Vec<String>,
    pub height: usize,
    pub width: usize,
}

impl SceneManifest {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::ManifestInvalid(msg));
        if self.scene_id.is_empty() {
            return bad("empty scene_id".into());
        }
        if self.dates.len() < 2 {
            return bad(format!("need at least 2 dates, got {}", self.dates.len()));
        }
        let mut parsed = Vec::with_capacity(self.dates.len());
        for d in &self.dates {
            match NaiveDate::parse_from_str(d, "%Y-%m-%d") {
                Ok(date) => parsed.push(date),
                Err(_) => return bad(format!("date {d:?} is not YYYY-MM-DD")),
            }
        }
        if parsed.windows(2).any(|w| w[0] >= w[1]) {
            return bad(format!("dates not strictly ascending: {:?}", self.dates));
        }
        if self.band_names.is_empty() {
            return bad("no bands".into());
        }
        for (i, b) in self.band_names.iter().enumerate() {
            if b.is_empty() || b.contains(['/', '\\']) {
                return bad(format!("band name {b:?} is not a valid file component"));
            }
            if self.band_names[..i].contains(b) {
                return bad(format!("duplicate band {b:?}"));
            }
        }
        if self.height == 0 || self.width == 0 {
            return bad(format!("empty extent {}x{}", self.height, self.width));
        }
        Ok(())
    }
}

/// On-disk manifest layout.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestFile {
    scene_id: String,
    dates: Vec<String>,
    bands: Vec<String>,
    height: usize,
    width: usize,
    has_mask: bool,
}

/// A co-registered multi-date stack, `rasters[date][band]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Scene {
    manifest: SceneManifest,
    rasters: Vec<Vec<BandRaster>>,
    mask: Option<ChangeMask>,
}

impl Scene {
    pub fn new(manifest: SceneManifest, rasters: Vec<Vec<BandRaster>>, mask: Option<ChangeMask>) -> Result<Self> {
        manifest.validate()?;
        if rasters.len() != manifest.dates.len() || rasters.iter().any(|r| r.len() != manifest.band_names.len()) {
            return Err(Error::IncompleteScene(format!(
                "{}: raster grid does not cover {} dates x {} bands",
                manifest.scene_id,
                manifest.dates.len(),
                manifest.band_names.len()
            )));
        }
        for r in rasters.iter().flatten() {
            if r.height != manifest.height || r.width != manifest.width {
                return Err(Error::InconsistentRasters(format!(
                    "{}: raster {}x{} in a {}x{} scene",
                    manifest.scene_id, r.height, r.width, manifest.height, manifest.width
                )));
            }
        }
        if let Some(m) = &mask {
            if m.height != manifest.height || m.width != manifest.width {
                return Err(Error::InconsistentRasters(format!(
                    "{}: mask {}x{} in a {}x{} scene",
                    manifest.scene_id, m.height, m.width, manifest.height, manifest.width
                )));
            }
        }
        Ok(Self {
            manifest,
            rasters,
            mask,
        })
    }

    pub fn manifest(&self) -> &SceneManifest {
        &self.manifest
    }

    pub fn id(&self) -> &str {
        &self.manifest.scene_id
    }

    pub fn num_dates(&self) -> usize {
        self.manifest.dates.len()
    }

    pub fn num_bands(&self) -> usize {
        self.manifest.band_names.len()
    }

    pub fn height(&self) -> usize {
        self.manifest.height
    }

    pub fn width(&self) -> usize {
        self.manifest.width
    }

    pub fn raster(&self, date: usize, band: usize) -> &BandRaster {
        &self.rasters[date][band]
    }

    pub fn rasters(&self) -> &[Vec<BandRaster>] {
        &self.rasters
    }

    pub fn mask(&self) -> Option<&ChangeMask> {
        self.mask.as_ref()
    }

    /// Sub-scene restricted to the given date indices (kept in the given order,
    /// which must be ascending).
    pub fn select_dates(&self, dates: &[usize]) -> Result<Scene> {
        if let Some(&d) = dates.iter().find(|&&d| d >= self.num_dates()) {
            return Err(Error::InvalidArgument(format!(
                "date index {d} out of range for {} dates",
                self.num_dates()
            )));
        }
        let manifest = SceneManifest {
            dates: dates.iter().map(|&d| self.manifest.dates[d].clone()).collect(),
            ..self.manifest.clone()
        };
        let rasters = dates.iter().map(|&d| self.rasters[d].clone()).collect();
        Scene::new(manifest, rasters, self.mask.clone())
    }
}

fn raster_file(date: &str, band: &str) -> String {
    format!("{date}_{band}.raw")
}

pub fn load_scene(dir: &Path) -> Result<Scene> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let text = match fs::read_to_string(&manifest_path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(Error::IncompleteScene(format!("{} missing", manifest_path.display())))
        }
        Err(e) => return Err(Error::io(&manifest_path, e)),
    };
    let file: ManifestFile =
        serde_json::from_str(&text).map_err(|e| Error::ManifestInvalid(format!("{}: {e}", manifest_path.display())))?;
    let manifest = SceneManifest {
        scene_id: file.scene_id,
        dates: file.dates,
        band_names: file.bands,
        height: file.height,
        width: file.width,
    };
    manifest.validate()?;
    let (h, w) = (manifest.height, manifest.width);

    let read = |name: &str| -> Result<Vec<u8>> {
        let path = dir.join(name);
        match fs::read(&path) {
            Ok(b) => Ok(b),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                Err(Error::IncompleteScene(format!("{} missing", path.display())))
            }
            Err(e) => Err(Error::io(path, e)),
        }
    };

    let mut rasters = Vec::with_capacity(manifest.dates.len());
    for date in &manifest.dates {
        let mut row = Vec::with_capacity(manifest.band_names.len());
        for band in &manifest.band_names {
            let name = raster_file(date, band);
            let bytes = read(&name)?;
            if bytes.len() != h * w * 2 {
                return Err(Error::InconsistentRasters(format!(
                    "{name}: {} bytes, expected {}",
                    bytes.len(),
                    h * w * 2
                )));
            }
            let values = bytes
                .chunks_exact(2)
                .map(|b| u16::from_le_bytes([b[0], b[1]]))
                .collect();
            row.push(BandRaster::new(h, w, values)?);
        }
        rasters.push(row);
    }

    let mask = if file.has_mask {
        let bytes = read(MASK_FILE)?;
        if bytes.len() != h * w {
            return Err(Error::InconsistentRasters(format!(
                "{MASK_FILE}: {} bytes, expected {}",
                bytes.len(),
                h * w
            )));
        }
        Some(ChangeMask::new(h, w, bytes)?)
    } else {
        None
    };

    Scene::new(manifest, rasters, mask)
}

pub fn save_scene(scene: &Scene, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let m = &scene.manifest;
    let file = ManifestFile {
        scene_id: m.scene_id.clone(),
        dates: m.dates.clone(),
        bands: m.band_names.clone(),
        height: m.height,
        width: m.width,
        has_mask: scene.mask.is_some(),
    };
    let mut text = serde_json::to_string_pretty(&file)?;
    text.push('\n');
    let path = dir.join(MANIFEST_FILE);
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;

    for (date, row) in m.dates.iter().zip(&scene.rasters) {
        for (band, raster) in m.band_names.iter().zip(row) {
            let bytes: Vec<u8> = raster.values.iter().flat_map(|v| v.to_le_bytes()).collect();
            let path = dir.join(raster_file(date, band));
            fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        }
    }
    if let Some(mask) = &scene.mask {
        mask.write_raw(&dir.join(MASK_FILE))?;
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BandStat {
    pub name: String,
    pub mean: f64,
    pub std: f64,
}

/// Per-band mean and population standard deviation over training scenes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BandStats {
    pub bands: Vec<BandStat>,
}

impl BandStats {
    pub fn get(&self, band: &str) -> Result<&BandStat> {
        self.bands
            .iter()
            .find(|b| b.name == band)
            .ok_or_else(|| Error::UnknownBand(band.to_string()))
    }
}

/// Pooled per-band statistics over every pixel of every date of every scene.
///
/// Accumulates exact integer moments, so the result does not depend on scene
/// or date order.
pub fn scene_stats(scenes: &[Scene]) -> Result<BandStats> {
    let first = scenes
        .first()
        .ok_or_else(|| Error::InvalidArgument("scene_stats over an empty scene list".into()))?;
    let bands = &first.manifest.band_names;
    if let Some(s) = scenes.iter().find(|s| &s.manifest.band_names != bands) {
        return Err(Error::InvalidArgument(format!(
            "scene {} has bands {:?}, expected {:?}",
            s.id(),
            s.manifest.band_names,
            bands
        )));
    }
    let stats = bands
        .iter()
        .enumerate()
        .map(|(b, name)| {
            let (mut n, mut sum, mut sumsq) = (0u128, 0u128, 0u128);
            for scene in scenes {
                for date in &scene.rasters {
                    for &v in &date[b].values {
                        n += 1;
                        sum += v as u128;
                        sumsq += (v as u128) * (v as u128);
                    }
                }
            }
            let mean = sum as f64 / n as f64;
            let var_n2 = n * sumsq - sum * sum;
            let std = (var_n2 as f64).sqrt() / n as f64;
            BandStat {
                name: name.clone(),
                mean,
                std,
            }
        })
        .collect();
    Ok(BandStats { bands: stats })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scene(values: &[&[u16]], h: usize, w: usize) -> Scene {
        let dates: Vec<String> = (0..values.len()).map(|i| format!("2017-0{}-01", i + 1)).collect();
        let manifest = SceneManifest {
            scene_id: "s".into(),
            dates,
            band_names: vec!["b1".into()],
            height: h,
            width: w,
        };
        let rasters = values
            .iter()
            .map(|v| vec![BandRaster::new(h, w, v.to_vec()).unwrap()])
            .collect();
        Scene::new(manifest, rasters, None).unwrap()
    }

    #[test]
    fn constant_band_stats() {
        let s = scene(&[&[5; 4], &[5; 4]], 2, 2);
        let st = scene_stats(&[s]).unwrap();
        assert_eq!(st.bands[0].mean, 5.0);
        assert_eq!(st.bands[0].std, 0.0);
    }

    #[test]
    fn two_valued_band_stats() {
        let s = scene(&[&[0, 10, 0, 10], &[10, 0, 10, 0]], 2, 2);
        let st = scene_stats(&[s]).unwrap();
        assert_eq!(st.bands[0].mean, 5.0);
        assert_eq!(st.bands[0].std, 5.0);
    }

    #[test]
    fn empty_scene_list_rejected() {
        assert!(scene_stats(&[]).is_err());
    }

    #[test]
    fn manifest_rejects_unordered_dates() {
        let m = SceneManifest {
            scene_id: "x".into(),
            dates: vec!["2018-01-01".into(), "2017-01-01".into()],
            band_names: vec!["b".into()],
            height: 1,
            width: 1,
        };
        assert!(matches!(m.validate(), Err(Error::ManifestInvalid(_))));
        let dup = SceneManifest {
            dates: vec!["2017-01-01".into(), "2018-01-01".into()],
            band_names: vec!["b".into(), "b".into()],
            ..m
        };
        assert!(matches!(dup.validate(), Err(Error::ManifestInvalid(_))));
    }

    #[test]
    fn mask_rejects_non_binary() {
        assert!(matches!(ChangeMask::new(1, 2, vec![0, 2]), Err(Error::MaskInvalid(_))));
    }

    #[test]
    fn select_dates_keeps_mask() {
        let s = scene(&[&[1; 4], &[2; 4], &[3; 4]], 2, 2);
        let sub = s.select_dates(&[0, 2]).unwrap();
        assert_eq!(sub.num_dates(), 2);
        assert_eq!(sub.raster(1, 0).get(0, 0), 3);
        assert!(s.select_dates(&[0, 3]).is_err());
    }
}
