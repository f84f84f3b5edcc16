use std::collections::BTreeSet;

use cdnet_core::net::build;
use cdnet_core::raster::scene_stats;
use cdnet_core::sampler::{augment, extract_patches};
use cdnet_core::synth::{generate_scene, SynthParams};
use cdnet_core::train::{train, train_ensemble, EpochLog};
use cdnet_core::{Checkpoint, ModelParams, NetConfig, PatchSet, SamplerConfig, TrainConfig, Variant};

fn patches() -> PatchSet {
    let p = SynthParams {
        seed: 31,
        height: 48,
        width: 48,
        num_dates: 3,
        n_urban_events: 4,
        ..SynthParams::default()
    };
    let scene = generate_scene(&p).unwrap().0;
    let cfg = SamplerConfig {
        patch_size: 16,
        stride_change: 8,
        stride_nochange: 16,
        ..SamplerConfig::default()
    };
    let stats = scene_stats(std::slice::from_ref(&scene)).unwrap();
    augment(&extract_patches(&scene, &cfg, &stats).unwrap(), &cfg)
}

fn net() -> NetConfig {
    NetConfig {
        base_depth: 4,
        levels: 3,
        ..NetConfig::new(Variant::UnetLstm, 4)
    }
}

fn quick(epochs: usize) -> TrainConfig {
    TrainConfig {
        batch_size: 8,
        learning_rate: 1e-3,
        epochs,
        seed: 3,
        ..TrainConfig::default()
    }
}

#[test]
fn zero_epochs_returns_initial_parameters() {
    let ps = patches();
    let init: ModelParams<f32> = build(&net(), 5).unwrap();
    let ck = train(init.clone(), &ps, None, &quick(0)).unwrap();
    assert_eq!(ck.params, init);
    assert!(ck.log.is_empty());
}

#[test]
fn training_is_deterministic_and_lowers_loss() {
    let ps = patches();
    let run = || train(build(&net(), 5).unwrap(), &ps, Some(&ps), &quick(4)).unwrap();
    let a = run();
    let b = run();
    assert_eq!(a.to_bytes().unwrap(), b.to_bytes().unwrap());
    assert_eq!(a.log.len(), 4);
    assert!(a.log[3].loss < a.log[0].loss, "{:?}", a.log);
    assert!(a.log.iter().all(|e| e.heldout_f1.is_some()));
    let other = train(
        build(&net(), 5).unwrap(),
        &ps,
        None,
        &TrainConfig { seed: 4, ..quick(4) },
    )
    .unwrap();
    assert_ne!(other.params, a.params);
}

#[test]
fn checkpoint_file_round_trip() {
    let ps = patches();
    let ck = train(build(&net(), 1).unwrap(), &ps, None, &quick(1)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.safetensors");
    ck.save(&path).unwrap();
    assert_eq!(Checkpoint::load(&path).unwrap(), ck);
    let log_path = dir.path().join("log.jsonl");
    ck.write_log_jsonl(&log_path).unwrap();
    let lines: Vec<EpochLog> = std::fs::read_to_string(&log_path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines, ck.log);
}

#[test]
fn ensemble_holds_out_each_fold_once() {
    let ps = patches();
    let (plan, cks) = train_ensemble(&net(), &ps, &quick(1)).unwrap();
    assert_eq!(cks.len(), 5);
    let held: BTreeSet<usize> = cks.iter().map(|c| c.held_out_fold.unwrap()).collect();
    assert_eq!(held, (0..5).collect());
    let sizes = plan.fold_sizes();
    assert_eq!(sizes.iter().sum::<usize>(), ps.len());
    assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
    for run in 0..5 {
        let (tr, ho) = plan.split(run);
        assert_eq!(tr.len() + ho.len(), ps.len());
        assert!(tr.iter().all(|i| !ho.contains(i)));
    }
    // Every member shares the class weights of the whole set.
    assert!(cks.iter().all(|c| c.class_weights == cks[0].class_weights));
}

#[test]
fn untrained_ensemble_members_are_seeded_inits() {
    let ps = patches();
    let cfg = TrainConfig { seed: 10, ..quick(0) };
    let (_, cks) = train_ensemble(&net(), &ps, &cfg).unwrap();
    for (i, ck) in cks.iter().enumerate() {
        assert_eq!(ck.params, build::<f32>(&net(), 10 + i as u64).unwrap());
    }
    for i in 1..cks.len() {
        assert_ne!(cks[i].params, cks[0].params);
    }
}
