use cdnet_core::synth::{generate_scene, save_synthetic, EventKind, EventLog, SynthParams, EVENTS_FILE};
use cdnet_core::Scene;

fn base(seed: u64) -> SynthParams {
    SynthParams {
        seed,
        ..SynthParams::default()
    }
}

/// Mask drawn independently from the event log.
fn rasterize(log: &EventLog, h: usize, w: usize) -> Vec<u8> {
    let mut out = vec![0u8; h * w];
    for e in log.events.iter().filter(|e| e.kind == EventKind::Urban) {
        for r in 0..h {
            for c in 0..w {
                let inside = r >= e.region.row
                    && r < e.region.row + e.region.height
                    && c >= e.region.col
                    && c < e.region.col + e.region.width;
                if inside {
                    out[r * w + c] = 1;
                }
            }
        }
    }
    out
}

#[test]
fn three_urban_events_cover_their_areas() {
    for seed in 0..10 {
        let p = SynthParams {
            n_urban_events: 3,
            ..base(seed)
        };
        let (scene, log) = generate_scene(&p).unwrap();
        let urban: Vec<_> = log.events.iter().filter(|e| e.kind == EventKind::Urban).collect();
        assert_eq!(urban.len(), 3);
        let area: usize = urban.iter().map(|e| e.region.height * e.region.width).sum();
        let mask = scene.mask().unwrap();
        assert_eq!(mask.change_count(), area);
        assert_eq!(mask.labels(), rasterize(&log, p.height, p.width).as_slice());
    }
}

#[test]
fn labels_are_sound_against_event_log() {
    for seed in 20..40 {
        let (scene, log) = generate_scene(&base(seed)).unwrap();
        let mask = scene.mask().unwrap();
        for r in 0..scene.height() {
            for c in 0..scene.width() {
                let in_urban = log
                    .events
                    .iter()
                    .any(|e| e.kind == EventKind::Urban && e.region.contains(r, c));
                assert_eq!(mask.get(r, c) == 1, in_urban, "seed {seed} ({r}, {c})");
            }
        }
    }
}

fn differing_pixels(a: &Scene, b: &Scene, date: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for band in 0..a.num_bands() {
        for r in 0..a.height() {
            for c in 0..a.width() {
                if a.raster(date, band).get(r, c) != b.raster(date, band).get(r, c) {
                    out.push((r, c));
                }
            }
        }
    }
    out
}

#[test]
fn interior_clouds_leave_endpoint_rasters_untouched() {
    for seed in 0..10 {
        // Without noise, cloud draws are the last use of the random stream,
        // so a cloud-free twin shares every other pixel.
        let clear = SynthParams {
            noise_std: 0.0,
            n_cloud_events: 0,
            ..base(seed)
        };
        let cloudy = SynthParams {
            n_cloud_events: 3,
            ..clear.clone()
        };
        let (a, _) = generate_scene(&clear).unwrap();
        let (b, log) = generate_scene(&cloudy).unwrap();
        let t = a.num_dates();
        assert!(differing_pixels(&a, &b, 0).is_empty());
        assert!(differing_pixels(&a, &b, t - 1).is_empty());
        let clouds: Vec<_> = log.events.iter().filter(|e| e.kind == EventKind::Cloud).collect();
        for d in 1..t - 1 {
            for (r, c) in differing_pixels(&a, &b, d) {
                assert!(clouds.iter().any(|e| e.onset == d && e.covers(r, c)));
            }
        }
        for e in clouds {
            let brightened = differing_pixels(&a, &b, e.onset);
            assert!(!brightened.is_empty());
        }
    }
}

#[test]
fn soil_patches_change_but_are_not_labelled() {
    let p = SynthParams {
        n_urban_events: 0,
        n_cloud_events: 0,
        n_soil_patches: 4,
        noise_std: 0.0,
        seasonal_amplitude: 0.0,
        ..base(3)
    };
    let (scene, log) = generate_scene(&p).unwrap();
    assert_eq!(scene.mask().unwrap().change_count(), 0);
    let varying = log
        .events
        .iter()
        .filter(|e| !e.active_dates.is_empty() && e.active_dates.len() < p.num_dates)
        .count();
    assert!(varying > 0);
    let moved = (1..p.num_dates).any(|d| scene.rasters()[d] != scene.rasters()[0]);
    assert!(moved);
}

#[test]
fn seasonal_modulation_scales_background() {
    let p = SynthParams {
        n_urban_events: 0,
        n_cloud_events: 0,
        n_soil_patches: 0,
        noise_std: 0.0,
        seasonal_amplitude: 0.2,
        ..base(4)
    };
    let (scene, _) = generate_scene(&p).unwrap();
    let b = 0;
    let mean = |d: usize| {
        let v = scene.raster(d, b).values();
        v.iter().map(|&x| x as f64).sum::<f64>() / v.len() as f64
    };
    let ratios: Vec<f64> = (1..p.num_dates).map(|d| mean(d) / mean(0)).collect();
    assert!(ratios.iter().any(|r| (r - 1.0).abs() > 0.02));
    // Multiplicative: every pixel keeps the same ratio to date 0, up to rounding.
    for d in 1..p.num_dates {
        let r = ratios[d - 1];
        for (x0, xd) in scene.raster(0, b).values().iter().zip(scene.raster(d, b).values()) {
            assert!((*xd as f64 - *x0 as f64 * r).abs() <= 1.0 + 0.01 * *x0 as f64);
        }
    }
}

#[test]
fn extreme_noise_is_clamped_and_counted() {
    let p = SynthParams {
        noise_std: 1e5,
        ..base(5)
    };
    let (_, log) = generate_scene(&p).unwrap();
    assert!(log.clamped_values > 0);
    let (_, quiet) = generate_scene(&base(5)).unwrap();
    assert_eq!(quiet.clamped_values, 0);
}

#[test]
fn events_file_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let (scene, log) = generate_scene(&base(6)).unwrap();
    save_synthetic(&scene, &log, dir.path()).unwrap();
    assert_eq!(EventLog::load(&dir.path().join(EVENTS_FILE)).unwrap(), log);
}
