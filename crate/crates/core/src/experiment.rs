//! Variant x date-count ablation grid on synthetic scenes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::infer::{evaluate, predict_scene, threshold, MetricsReport, TileOptions};
use crate::net::{build, NetConfig, Variant};
use crate::raster::{scene_stats, Scene};
use crate::sampler::{augment, extract_patches, PatchSet, SamplerConfig};
use crate::synth::{split_synthetic, SynthParams};
use crate::train::{train, train_ensemble, Checkpoint, TrainConfig};

fn default_variants() -> Vec<Variant> {
    vec![Variant::UnetPlain, Variant::UnetLstm]
}
fn default_date_counts() -> Vec<usize> {
    vec![2, 3, 5]
}
fn default_seeds() -> Vec<u64> {
    vec![0]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Template for every scene; scene `i` uses seed `data_seed + i`.
    pub scene: SynthParams,
    pub n_train_scenes: usize,
    pub n_test_scenes: usize,
    #[serde(default)]
    pub data_seed: u64,
    #[serde(default)]
    pub sampler: SamplerConfig,
    pub base_depth: usize,
    pub levels: usize,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default = "default_variants")]
    pub variants: Vec<Variant>,
    /// Dates kept per cell, spread evenly over the scene's dates and always
    /// including the first and last.
    #[serde(default = "default_date_counts")]
    pub date_counts: Vec<usize>,
    /// Each seed re-runs every cell with that training seed.
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Train a k-fold ensemble per cell instead of one model on all patches.
    #[serde(default)]
    pub ensemble: bool,
    #[serde(default)]
    pub inference: TileOptions,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub variant: Variant,
    pub num_dates: usize,
    pub seed: u64,
    pub train_patches: usize,
    pub final_loss: Option<f64>,
    /// Confusion pooled over every test scene.
    pub metrics: MetricsReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub variant: Variant,
    pub num_dates: usize,
    pub mean_f1: f64,
    pub f1_by_seed: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub train_scenes: Vec<String>,
    pub test_scenes: Vec<String>,
    pub cells: Vec<CellResult>,
    pub summary: Vec<CellSummary>,
}

impl ExperimentReport {
    pub fn mean_f1(&self, variant: Variant, num_dates: usize) -> Option<f64> {
        self.summary
            .iter()
            .find(|s| s.variant == variant && s.num_dates == num_dates)
            .map(|s| s.mean_f1)
    }
}

/// `k` date indices out of `total`, evenly spaced and rounded: `round(i (total-1) / (k-1))`.
pub fn spread_dates(total: usize, k: usize) -> Result<Vec<usize>> {
    if k < 2 || k > total {
        return Err(Error::InvalidArgument(format!("cannot pick {k} of {total} dates")));
    }
    Ok((0..k)
        .map(|i| ((i * (total - 1)) as f64 / (k - 1) as f64).round() as usize)
        .collect())
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.scene.validate()?;
        self.sampler.validate()?;
        self.train.validate()?;
        if self.n_train_scenes == 0 || self.n_test_scenes == 0 {
            return Err(Error::InvalidArgument("need train and test scenes".into()));
        }
        if self.variants.is_empty() || self.date_counts.is_empty() || self.seeds.is_empty() {
            return Err(Error::InvalidArgument("empty experiment grid".into()));
        }
        for &k in &self.date_counts {
            spread_dates(self.scene.num_dates, k)?;
        }
        Ok(())
    }

    fn net(&self, variant: Variant, num_dates: usize) -> NetConfig {
        NetConfig {
            base_depth: self.base_depth,
            levels: self.levels,
            num_dates: (variant == Variant::UnetPlain).then_some(num_dates),
            ..NetConfig::new(variant, self.scene.num_bands)
        }
    }
}

fn patches_for(scenes: &[Scene], cfg: &SamplerConfig) -> Result<PatchSet> {
    let stats = scene_stats(scenes)?;
    let sets = scenes
        .iter()
        .map(|s| extract_patches(s, cfg, &stats).map(|ps| augment(&ps, cfg)))
        .collect::<Result<Vec<_>>>()?;
    PatchSet::merge(sets)
}

/// Run the whole grid. `progress` sees each cell as it finishes.
pub fn run_experiment(cfg: &ExperimentConfig, mut progress: impl FnMut(&CellResult)) -> Result<ExperimentReport> {
    cfg.validate()?;
    let n = cfg.n_train_scenes + cfg.n_test_scenes;
    let params: Vec<SynthParams> = (0..n as u64)
        .map(|i| SynthParams {
            seed: cfg.data_seed.wrapping_add(i),
            ..cfg.scene.clone()
        })
        .collect();
    let (train_g, test_g) = split_synthetic(&params, cfg.n_train_scenes as f64 / n as f64)?;
    let train_scenes: Vec<Scene> = train_g.into_iter().map(|g| g.0).collect();
    let test_scenes: Vec<Scene> = test_g.into_iter().map(|g| g.0).collect();

    let mut cells = Vec::new();
    for &k in &cfg.date_counts {
        let dates = spread_dates(cfg.scene.num_dates, k)?;
        let tr = train_scenes
            .iter()
            .map(|s| s.select_dates(&dates))
            .collect::<Result<Vec<_>>>()?;
        let te = test_scenes
            .iter()
            .map(|s| s.select_dates(&dates))
            .collect::<Result<Vec<_>>>()?;
        let ps = patches_for(&tr, &cfg.sampler)?;
        for &variant in &cfg.variants {
            let net = cfg.net(variant, k);
            for &seed in &cfg.seeds {
                let tcfg = TrainConfig {
                    seed,
                    ..cfg.train.clone()
                };
                let checkpoints: Vec<Checkpoint> = if cfg.ensemble {
                    train_ensemble(&net, &ps, &tcfg)?.1
                } else {
                    vec![train(build(&net, seed)?, &ps, None, &tcfg)?]
                };
                let reports = te
                    .iter()
                    .map(|scene| {
                        let pm = predict_scene(&checkpoints, scene, &cfg.inference)?;
                        let gt = scene.mask().ok_or_else(|| Error::MissingMask(scene.id().to_string()))?;
                        evaluate(&threshold(&pm, cfg.inference.threshold)?, gt)
                    })
                    .collect::<Result<Vec<_>>>()?;
                let cell = CellResult {
                    variant,
                    num_dates: k,
                    seed,
                    train_patches: ps.len(),
                    final_loss: checkpoints[0].log.last().map(|e| e.loss),
                    metrics: MetricsReport::pooled(&reports),
                };
                progress(&cell);
                cells.push(cell);
            }
        }
    }
    let mut summary = Vec::new();
    for &k in &cfg.date_counts {
        for &variant in &cfg.variants {
            let f1s: Vec<f64> = cells
                .iter()
                .filter(|c| c.variant == variant && c.num_dates == k)
                .map(|c| c.metrics.f1)
                .collect();
            summary.push(CellSummary {
                variant,
                num_dates: k,
                mean_f1: f1s.iter().sum::<f64>() / f1s.len() as f64,
                f1_by_seed: f1s,
            });
        }
    }
    Ok(ExperimentReport {
        train_scenes: train_scenes.iter().map(|s| s.id().to_string()).collect(),
        test_scenes: test_scenes.iter().map(|s| s.id().to_string()).collect(),
        cells,
        summary,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spread_keeps_endpoints() {
        assert_eq!(spread_dates(5, 2).unwrap(), vec![0, 4]);
        assert_eq!(spread_dates(5, 3).unwrap(), vec![0, 2, 4]);
        assert_eq!(spread_dates(5, 5).unwrap(), vec![0, 1, 2, 3, 4]);
        assert!(spread_dates(5, 6).is_err());
        assert!(spread_dates(5, 1).is_err());
    }
}
