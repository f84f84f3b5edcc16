use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};

fn cdnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cdnet")).args(args).output().unwrap()
}

fn run(cmd: &str, config: &Path, out: &Path) -> Output {
    cdnet(&[
        cmd,
        "--config",
        config.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ])
}

fn write(dir: &Path, name: &str, v: &Value) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, serde_json::to_string_pretty(v).unwrap()).unwrap();
    p
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

fn error_of(out: &Output) -> Value {
    serde_json::from_str(String::from_utf8_lossy(&out.stderr).trim()).unwrap()
}

fn scene_params(urban: usize) -> Value {
    json!({
        "seed": 0, "height": 64, "width": 64, "num_dates": 3, "num_bands": 4,
        "n_urban_events": urban, "urban_size_range": [6, 12], "n_cloud_events": 0,
        "cloud_radius_range": [3, 6], "seasonal_amplitude": 0.1, "n_soil_patches": 0, "noise_std": 20.0
    })
}

#[test]
fn synth_then_patches_on_clear_scene_lists_four_origins() {
    let tmp = tempfile::tempdir().unwrap();
    let synth_cfg = write(tmp.path(), "synth.json", &json!({"params": scene_params(0)}));
    let scenes = tmp.path().join("scenes");
    assert!(run("synth", &synth_cfg, &scenes).status.success());
    let scene_dir = scenes.join("synth-0");
    assert!(scene_dir.join("manifest.json").is_file());
    let patches_cfg = write(tmp.path(), "patches.json", &json!({"scenes": ["scenes/synth-0"]}));
    let out = tmp.path().join("patches");
    assert!(run("patches", &patches_cfg, &out).status.success());
    let index = read_json(&out.join("patches.json"));
    assert_eq!(index["origins"].as_array().unwrap().len(), 4);
    let record = read_json(&out.join("run.json"));
    assert_eq!(record["command"], "patches");
    assert_eq!(record["outputs"].as_object().unwrap().len(), 3);
    assert!(!record["inputs"].as_object().unwrap().is_empty());
}

#[test]
fn eval_on_identical_masks_is_perfect() {
    let tmp = tempfile::tempdir().unwrap();
    let synth_cfg = write(tmp.path(), "synth.json", &json!({"params": scene_params(3)}));
    assert!(run("synth", &synth_cfg, &tmp.path().join("s")).status.success());
    let cmp = write(
        tmp.path(),
        "cmp.json",
        &json!({"prediction": "s/synth-0", "ground_truth": "s/synth-0"}),
    );
    let out = tmp.path().join("eval");
    let res = run("eval", &cmp, &out);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let m = read_json(&out.join("metrics.json"));
    assert_eq!(m["f1"], 1.0);
    assert_eq!(m["fp"], 0);
    assert!(run("render", &cmp, &tmp.path().join("render")).status.success());
    assert!(tmp.path().join("render/comparison.png").is_file());
}

#[test]
fn experiment_grid_emits_one_report_per_cell() {
    let tmp = tempfile::tempdir().unwrap();
    let mut scene = scene_params(2);
    scene["height"] = json!(32);
    scene["width"] = json!(32);
    scene["num_dates"] = json!(5);
    scene["urban_size_range"] = json!([4, 8]);
    let cfg = write(
        tmp.path(),
        "exp.json",
        &json!({
            "scene": scene, "n_train_scenes": 1, "n_test_scenes": 1, "base_depth": 2, "levels": 2,
            "train": {"batch_size": 16, "epochs": 1},
            "variants": ["unet_plain", "unet_lstm"], "date_counts": [2, 3, 5]
        }),
    );
    let out = tmp.path().join("exp");
    let res = run("experiment", &cfg, &out);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let cells: Vec<_> = std::fs::read_dir(out.join("cells")).unwrap().collect();
    assert_eq!(cells.len(), 6);
    let report = read_json(&out.join("report.json"));
    assert_eq!(report["cells"].as_array().unwrap().len(), 6);
    let cell = read_json(&out.join("cells/unet_lstm_t5_seed0.json"));
    assert!(cell["f1"].is_number());
}

#[test]
fn run_record_reexecutes_identically() {
    let tmp = tempfile::tempdir().unwrap();
    let synth_cfg = write(
        tmp.path(),
        "synth.json",
        &json!({"params": scene_params(2), "count": 2}),
    );
    let first = tmp.path().join("a");
    let res = cdnet(&[
        "synth",
        "--config",
        synth_cfg.to_str().unwrap(),
        "--seed",
        "9",
        "--out",
        first.to_str().unwrap(),
    ]);
    assert!(res.status.success());
    let record = read_json(&first.join("run.json"));
    assert_eq!(record["seed"], 9);
    let echo = write(tmp.path(), "echo.json", &record["config"]);
    let second = tmp.path().join("b");
    assert!(run("synth", &echo, &second).status.success());
    let again = read_json(&second.join("run.json"));
    assert_eq!(again["outputs"], record["outputs"]);
    assert!(second.join("synth-9").is_dir() && second.join("synth-10").is_dir());
}

#[test]
fn exit_codes_and_error_json() {
    let tmp = tempfile::tempdir().unwrap();

    let bad = write(tmp.path(), "bad.json", &json!({"params": scene_params(0), "bogus": 1}));
    let res = run("synth", &bad, &tmp.path().join("x"));
    assert_eq!(res.status.code(), Some(1));
    let err = error_of(&res);
    assert_eq!(err["error"], "config_invalid");
    assert_eq!(err["exit_code"], 1);

    let mut p = scene_params(0);
    p["height"] = json!(0);
    let invalid = write(tmp.path(), "invalid.json", &json!({"params": p}));
    assert_eq!(run("synth", &invalid, &tmp.path().join("x")).status.code(), Some(1));

    let missing = write(tmp.path(), "missing.json", &json!({"scenes": ["nowhere/synth-0"]}));
    let res = run("patches", &missing, &tmp.path().join("y"));
    assert_eq!(res.status.code(), Some(2));
    assert_eq!(error_of(&res)["error"], "missing_input");

    // A tile larger than the scene fails at run time.
    let synth_cfg = write(tmp.path(), "synth.json", &json!({"params": scene_params(1)}));
    assert!(run("synth", &synth_cfg, &tmp.path().join("s")).status.success());
    assert!(run(
        "patches",
        &write(tmp.path(), "p.json", &json!({"scenes": ["s/synth-0"]})),
        &tmp.path().join("p")
    )
    .status
    .success());
    let train_cfg = write(
        tmp.path(),
        "train.json",
        &json!({"patches": "p", "net": {"in_channels": 4, "base_depth": 2, "levels": 2, "variant": "unet_lstm"},
                "train": {"epochs": 0}}),
    );
    let res = run("train", &train_cfg, &tmp.path().join("m"));
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let predict_cfg = write(
        tmp.path(),
        "predict.json",
        &json!({"checkpoints": ["m/model.safetensors"], "scene": "s/synth-0", "inference": {"tile": 128}}),
    );
    let res = run("predict", &predict_cfg, &tmp.path().join("q"));
    assert_eq!(res.status.code(), Some(3));
    assert_eq!(error_of(&res)["error"], "runtime_failure");
}
