use std::fs;
use std::path::{Path, PathBuf};

use cdnet_core::experiment::run_experiment;
use cdnet_core::infer::{evaluate, predict_scene, render_comparison, save_png, threshold};
use cdnet_core::net::build;
use cdnet_core::raster::{load_scene, scene_stats, MANIFEST_FILE, MASK_FILE};
use cdnet_core::sampler::{augment, extract_patches, load_patch_set, save_patch_set, PatchSet};
use cdnet_core::synth::{generate_scene, save_synthetic, split_synthetic, SynthParams};
use cdnet_core::train::{train, train_ensemble, Checkpoint};
use cdnet_core::{ChangeMask, Error, ProbabilityMap};
use serde::Serialize;

use crate::config::{
    self, anchor, CompareConfig, ExperimentCmdConfig, PatchesConfig, PredictConfig, SynthConfig, TrainCmdConfig,
};
use crate::error::{invalid, CliError};
use crate::provenance::{self, files_under, RunRecord};

pub const PROBABILITY_FILE: &str = "probability.raw";
pub const PREDICTED_MASK_FILE: &str = "mask.raw";
pub const METRICS_FILE: &str = "metrics.json";
pub const COMPARISON_FILE: &str = "comparison.png";
pub const MODEL_FILE: &str = "model.safetensors";
pub const TRAIN_LOG_FILE: &str = "train_log.jsonl";
pub const FOLDS_FILE: &str = "folds.json";
pub const REPORT_FILE: &str = "report.json";

pub struct Invocation<'a> {
    pub command: &'a str,
    pub config_path: &'a Path,
    pub seed: Option<u64>,
    pub out: &'a Path,
}

impl Invocation<'_> {
    fn base(&self) -> PathBuf {
        self.config_path.parent().map(Path::to_path_buf).unwrap_or_default()
    }

    fn input(&self, p: &Path) -> PathBuf {
        anchor(&self.base(), p)
    }
}

struct Outcome {
    config: serde_json::Value,
    seed: Option<u64>,
    inputs: Vec<PathBuf>,
    written: Vec<PathBuf>,
}

fn to_value<T: Serialize>(v: &T) -> Result<serde_json::Value, CliError> {
    Ok(serde_json::to_value(v).map_err(Error::from)?)
}

fn mkdir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })?;
    Ok(())
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<PathBuf, CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(Error::from)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(path.to_path_buf())
}

pub fn run(inv: &Invocation) -> Result<(), CliError> {
    let outcome = match inv.command {
        "synth" => synth(inv)?,
        "patches" => patches(inv)?,
        "train" => train_cmd(inv)?,
        "train-ensemble" => train_ensemble_cmd(inv)?,
        "predict" => predict(inv)?,
        "eval" => eval(inv)?,
        "render" => render(inv)?,
        "experiment" => experiment(inv)?,
        other => return Err(CliError::Config(format!("unknown command {other}"))),
    };
    let record = RunRecord {
        tool: "cdnet",
        version: env!("CARGO_PKG_VERSION"),
        command: inv.command.to_string(),
        seed: outcome.seed,
        config: outcome.config,
        inputs: provenance::hash_inputs(&outcome.inputs)?,
        outputs: provenance::hash_outputs(inv.out, &outcome.written)?,
    };
    provenance::write(&record, inv.out)
}

fn synth(inv: &Invocation) -> Result<Outcome, CliError> {
    let mut cfg: SynthConfig = config::read(inv.config_path)?;
    if let Some(s) = inv.seed {
        cfg.params.seed = s;
    }
    cfg.params.validate().map_err(invalid)?;
    if cfg.count == 0 {
        return Err(CliError::Config("count must be >= 1".into()));
    }
    let params: Vec<SynthParams> = (0..cfg.count as u64)
        .map(|i| SynthParams {
            seed: cfg.params.seed.wrapping_add(i),
            ..cfg.params.clone()
        })
        .collect();
    mkdir(inv.out)?;
    let mut dirs = Vec::new();
    match cfg.train_fraction {
        Some(f) => {
            let (tr, te) = split_synthetic(&params, f).map_err(invalid)?;
            for (split, set) in [("train", tr), ("test", te)] {
                for (scene, log) in set {
                    let dir = inv.out.join(split).join(scene.id());
                    save_synthetic(&scene, &log, &dir)?;
                    dirs.push(dir);
                }
            }
        }
        None => {
            for p in &params {
                let (scene, log) = generate_scene(p)?;
                let dir = inv.out.join(scene.id());
                save_synthetic(&scene, &log, &dir)?;
                dirs.push(dir);
            }
        }
    }
    let mut written = Vec::new();
    for d in &dirs {
        written.extend(files_under(d)?);
    }
    Ok(Outcome {
        config: to_value(&cfg)?,
        seed: Some(cfg.params.seed),
        inputs: vec![],
        written,
    })
}

fn patches(inv: &Invocation) -> Result<Outcome, CliError> {
    let cfg: PatchesConfig = config::read(inv.config_path)?;
    cfg.sampler.validate().map_err(invalid)?;
    if cfg.scenes.is_empty() {
        return Err(CliError::Config("no scenes listed".into()));
    }
    let scene_dirs: Vec<PathBuf> = cfg.scenes.iter().map(|p| inv.input(p)).collect();
    let stat_dirs: Vec<PathBuf> = match &cfg.stats_scenes {
        Some(list) => list.iter().map(|p| inv.input(p)).collect(),
        None => scene_dirs.clone(),
    };
    let scenes = scene_dirs
        .iter()
        .map(|d| load_scene(d))
        .collect::<Result<Vec<_>, _>>()?;
    let stat_scenes = if cfg.stats_scenes.is_some() {
        stat_dirs.iter().map(|d| load_scene(d)).collect::<Result<Vec<_>, _>>()?
    } else {
        scenes.clone()
    };
    let stats = scene_stats(&stat_scenes)?;
    let sets = scenes
        .iter()
        .map(|s| {
            let ps = extract_patches(s, &cfg.sampler, &stats)?;
            Ok(if cfg.augment { augment(&ps, &cfg.sampler) } else { ps })
        })
        .collect::<Result<Vec<_>, Error>>()?;
    let ps = PatchSet::merge(sets)?;
    mkdir(inv.out)?;
    save_patch_set(&ps, inv.out)?;
    let mut inputs = scene_dirs;
    if cfg.stats_scenes.is_some() {
        inputs.extend(stat_dirs);
    }
    Ok(Outcome {
        config: to_value(&cfg)?,
        seed: None,
        inputs,
        written: [
            cdnet_core::sampler::PATCHES_BIN,
            cdnet_core::sampler::LABELS_BIN,
            cdnet_core::sampler::PATCHES_JSON,
        ]
        .iter()
        .map(|f| inv.out.join(f))
        .collect(),
    })
}

fn load_train_config(inv: &Invocation) -> Result<TrainCmdConfig, CliError> {
    let mut cfg: TrainCmdConfig = config::read(inv.config_path)?;
    if let Some(s) = inv.seed {
        cfg.train.seed = s;
    }
    cfg.net.validate().map_err(invalid)?;
    cfg.train.validate().map_err(invalid)?;
    Ok(cfg)
}

fn check_layout(cfg: &TrainCmdConfig, ps: &PatchSet) -> Result<(), CliError> {
    if cfg.net.in_channels != ps.num_bands {
        return Err(CliError::Config(format!(
            "net.in_channels {} but patches have {} bands",
            cfg.net.in_channels, ps.num_bands
        )));
    }
    if let Some(t) = cfg.net.num_dates {
        if cfg.net.variant == cdnet_core::Variant::UnetPlain && t != ps.num_dates {
            return Err(CliError::Config(format!(
                "net.num_dates {t} but patches have {} dates",
                ps.num_dates
            )));
        }
    }
    Ok(())
}

fn train_cmd(inv: &Invocation) -> Result<Outcome, CliError> {
    let cfg = load_train_config(inv)?;
    let patches_dir = inv.input(&cfg.patches);
    let ps = load_patch_set(&patches_dir)?;
    check_layout(&cfg, &ps)?;
    let mut inputs = vec![patches_dir];
    let validation = match &cfg.validation {
        Some(p) => {
            let dir = inv.input(p);
            let v = load_patch_set(&dir)?;
            inputs.push(dir);
            Some(v)
        }
        None => None,
    };
    let params = build(&cfg.net, cfg.train.seed)?;
    let ck = train(params, &ps, validation.as_ref(), &cfg.train)?;
    mkdir(inv.out)?;
    let model = inv.out.join(MODEL_FILE);
    let log = inv.out.join(TRAIN_LOG_FILE);
    ck.save(&model)?;
    ck.write_log_jsonl(&log)?;
    Ok(Outcome {
        seed: Some(cfg.train.seed),
        config: to_value(&cfg)?,
        inputs,
        written: vec![model, log],
    })
}

fn train_ensemble_cmd(inv: &Invocation) -> Result<Outcome, CliError> {
    let cfg = load_train_config(inv)?;
    if cfg.validation.is_some() {
        return Err(CliError::Config("validation is not used by train-ensemble".into()));
    }
    let patches_dir = inv.input(&cfg.patches);
    let ps = load_patch_set(&patches_dir)?;
    check_layout(&cfg, &ps)?;
    let (plan, checkpoints) = train_ensemble(&cfg.net, &ps, &cfg.train)?;
    mkdir(inv.out)?;
    let mut written = vec![write_json(&plan, &inv.out.join(FOLDS_FILE))?];
    for (i, ck) in checkpoints.iter().enumerate() {
        let model = inv.out.join(format!("fold_{i}.safetensors"));
        let log = inv.out.join(format!("fold_{i}_log.jsonl"));
        ck.save(&model)?;
        ck.write_log_jsonl(&log)?;
        written.push(model);
        written.push(log);
    }
    Ok(Outcome {
        seed: Some(cfg.train.seed),
        config: to_value(&cfg)?,
        inputs: vec![patches_dir],
        written,
    })
}

fn predict(inv: &Invocation) -> Result<Outcome, CliError> {
    let cfg: PredictConfig = config::read(inv.config_path)?;
    if cfg.checkpoints.is_empty() {
        return Err(CliError::Config("no checkpoints listed".into()));
    }
    let t = cfg.inference.threshold;
    if !(t > 0.0 && t < 1.0) {
        return Err(CliError::Config(format!("threshold {t} outside (0, 1)")));
    }
    let ck_paths: Vec<PathBuf> = cfg.checkpoints.iter().map(|p| inv.input(p)).collect();
    let scene_dir = inv.input(&cfg.scene);
    let checkpoints = ck_paths
        .iter()
        .map(|p| Checkpoint::load(p))
        .collect::<Result<Vec<_>, _>>()?;
    let scene = load_scene(&scene_dir)?;
    let pm = predict_scene(&checkpoints, &scene, &cfg.inference)?;
    let mask = threshold(&pm, t)?;
    mkdir(inv.out)?;
    let prob = inv.out.join(PROBABILITY_FILE);
    pm.save(&prob)?;
    let mask_path = inv.out.join(PREDICTED_MASK_FILE);
    mask.write_raw(&mask_path)?;
    let mut inputs = ck_paths;
    inputs.push(scene_dir);
    Ok(Outcome {
        config: to_value(&cfg)?,
        seed: None,
        inputs,
        written: vec![prob.clone(), prob.with_extension("json"), mask_path],
    })
}

/// Scene directory, `predict` output directory, or raw mask file.
fn resolve_mask(path: &Path, dims: Option<(usize, usize)>) -> Result<(ChangeMask, PathBuf), CliError> {
    if path.is_dir() {
        if path.join(MANIFEST_FILE).is_file() {
            let scene = load_scene(path)?;
            let mask = scene
                .mask()
                .cloned()
                .ok_or_else(|| Error::MissingMask(scene.id().to_string()))?;
            return Ok((mask, path.join(MASK_FILE)));
        }
        let prob = path.join(PROBABILITY_FILE);
        let pm = ProbabilityMap::load(&prob)?;
        let raw = path.join(PREDICTED_MASK_FILE);
        return Ok((ChangeMask::read_raw(&raw, pm.height(), pm.width())?, raw));
    }
    if !path.exists() {
        return Err(Error::Io {
            path: path.to_path_buf(),
            source: std::io::Error::from(std::io::ErrorKind::NotFound),
        }
        .into());
    }
    let (h, w) =
        dims.ok_or_else(|| CliError::Config(format!("{}: raw mask needs height and width", path.display())))?;
    Ok((ChangeMask::read_raw(path, h, w)?, path.to_path_buf()))
}

fn load_pair(inv: &Invocation) -> Result<(CompareConfig, ChangeMask, ChangeMask, Vec<PathBuf>), CliError> {
    let cfg: CompareConfig = config::read(inv.config_path)?;
    let dims = match (cfg.height, cfg.width) {
        (Some(h), Some(w)) => Some((h, w)),
        (None, None) => None,
        _ => return Err(CliError::Config("give both height and width or neither".into())),
    };
    let (pred, p1) = resolve_mask(&inv.input(&cfg.prediction), dims)?;
    let (gt, p2) = resolve_mask(&inv.input(&cfg.ground_truth), dims)?;
    Ok((cfg, pred, gt, vec![p1, p2]))
}

fn eval(inv: &Invocation) -> Result<Outcome, CliError> {
    let (cfg, pred, gt, inputs) = load_pair(inv)?;
    let report = evaluate(&pred, &gt)?;
    mkdir(inv.out)?;
    let path = write_json(&report, &inv.out.join(METRICS_FILE))?;
    Ok(Outcome {
        config: to_value(&cfg)?,
        seed: None,
        inputs,
        written: vec![path],
    })
}

fn render(inv: &Invocation) -> Result<Outcome, CliError> {
    let (cfg, pred, gt, inputs) = load_pair(inv)?;
    let img = render_comparison(&pred, &gt)?;
    mkdir(inv.out)?;
    let path = inv.out.join(COMPARISON_FILE);
    save_png(&img, &path)?;
    Ok(Outcome {
        config: to_value(&cfg)?,
        seed: None,
        inputs,
        written: vec![path],
    })
}

fn experiment(inv: &Invocation) -> Result<Outcome, CliError> {
    let mut cfg: ExperimentCmdConfig = config::read(inv.config_path)?;
    if let Some(s) = inv.seed {
        cfg.seeds = vec![s];
    }
    cfg.validate().map_err(invalid)?;
    mkdir(&inv.out.join("cells"))?;
    let mut written = Vec::new();
    let mut failed = None;
    let report = run_experiment(&cfg, |cell| {
        let name = format!("{}_t{}_seed{}.json", cell.variant, cell.num_dates, cell.seed);
        match write_json(&cell.metrics, &inv.out.join("cells").join(name)) {
            Ok(p) => written.push(p),
            Err(e) => failed = failed.take().or(Some(e)),
        }
        eprintln!(
            "{} T={} seed={}: F1 {:.4}",
            cell.variant, cell.num_dates, cell.seed, cell.metrics.f1
        );
    })?;
    if let Some(e) = failed {
        return Err(e);
    }
    written.push(write_json(&report, &inv.out.join(REPORT_FILE))?);
    let seed = (cfg.seeds.len() == 1).then(|| cfg.seeds[0]);
    Ok(Outcome {
        config: to_value(&cfg)?,
        seed,
        inputs: vec![],
        written,
    })
}
