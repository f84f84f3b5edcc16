use std::path::{Path, PathBuf};

use cdnet_core::experiment::ExperimentConfig;
use cdnet_core::{NetConfig, SamplerConfig, SynthParams, TileOptions, TrainConfig};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

fn one() -> usize {
    1
}
fn yes() -> bool {
    true
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    /// Template; scene `i` gets seed `params.seed + i`.
    pub params: SynthParams,
    #[serde(default = "one")]
    pub count: usize,
    /// When set, scenes are written under `train/` and `test/`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_fraction: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatchesConfig {
    pub scenes: Vec<PathBuf>,
    #[serde(default)]
    pub sampler: SamplerConfig,
    #[serde(default = "yes")]
    pub augment: bool,
    /// Scenes that define the normalization statistics. Defaults to `scenes`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stats_scenes: Option<Vec<PathBuf>>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainCmdConfig {
    pub patches: PathBuf,
    pub net: NetConfig,
    #[serde(default)]
    pub train: TrainConfig,
    /// Patch set scored after every epoch (single-model training only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub validation: Option<PathBuf>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictConfig {
    pub checkpoints: Vec<PathBuf>,
    pub scene: PathBuf,
    #[serde(default)]
    pub inference: TileOptions,
}

/// A prediction and a ground truth mask. Each path is a scene directory, a
/// `predict` output directory, or a raw mask file (then `height` and `width`
/// are required).
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareConfig {
    pub prediction: PathBuf,
    pub ground_truth: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub height: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub width: Option<usize>,
}

pub type ExperimentCmdConfig = ExperimentConfig;

pub fn read<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

/// Resolve relative input paths against the config file's directory.
pub fn anchor(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}
