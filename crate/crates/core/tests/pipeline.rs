use std::fs;

use tssto_core::pipeline::{convergence_csv, decompose, write_remove_outputs};
use tssto_core::poisson::PoissonConfig;
use tssto_core::synthetic::{desk_fixture, piecewise_scene, Fixture, FixtureConfig, SceneConfig};
use tssto_core::{run_remove, ImageStack, Label, LabelMask, RemoveConfig, StackMeta, ThresholdConfig};

fn small_fixture() -> Fixture {
    desk_fixture(&FixtureConfig {
        scene: SceneConfig {
            rows: 32,
            cols: 32,
            bands: 2,
            frames: 4,
            cells: 6,
            ..SceneConfig::default()
        },
        coverage: 0.06,
        cloudy_frames: vec![2],
        ..FixtureConfig::default()
    })
    .unwrap()
}

fn exact_masks() -> RemoveConfig {
    RemoveConfig {
        thresholds: ThresholdConfig {
            dilation_radius_px: 0,
            ..ThresholdConfig::default()
        },
        ..RemoveConfig::default()
    }
}

#[test]
fn skip_cloning_returns_the_substitution_stage() {
    let fx = small_fixture();
    let cfg = RemoveConfig {
        skip_cloning: true,
        ..exact_masks()
    };
    let out = run_remove(&fx.contaminated, &cfg, None).unwrap();
    assert!(out.cloning.is_none());
    assert_eq!(out.restored.bands(), out.preliminary.bands());
    let full = run_remove(&fx.contaminated, &exact_masks(), None).unwrap();
    assert_eq!(full.preliminary.bands(), out.preliminary.bands());
}

#[test]
fn external_masks_bypass_thresholding() {
    let fx = small_fixture();
    // thresholds that would fail validation are never consulted
    let cfg = RemoveConfig {
        thresholds: ThresholdConfig::bare(-1.0, 1.0),
        ..RemoveConfig::default()
    };
    let out = run_remove(&fx.contaminated, &cfg, Some(fx.truth.clone())).unwrap();
    assert_eq!(out.masks, fx.truth);
    assert!(run_remove(&fx.contaminated, &cfg, None).is_err());
    let wrong = vec![LabelMask::clear(0, 32, 32)];
    assert!(run_remove(&fx.contaminated, &cfg, Some(wrong)).is_err());
}

#[test]
fn clear_pixels_pass_through_untouched() {
    let fx = small_fixture();
    let out = run_remove(&fx.contaminated, &exact_masks(), None).unwrap();
    assert_eq!(out.masks, fx.truth);
    for b in 0..2 {
        for k in 0..4 {
            for (q, label) in out.masks[k].labels().iter().enumerate() {
                if label.is_clear() {
                    assert_eq!(out.restored.plane(b, k)[q].to_bits(), fx.contaminated.plane(b, k)[q].to_bits());
                }
            }
        }
    }
}

#[test]
fn single_frame_is_rejected() {
    let scene = piecewise_scene(&SceneConfig {
        frames: 1,
        rows: 8,
        cols: 8,
        ..SceneConfig::default()
    })
    .unwrap();
    assert!(run_remove(&scene, &RemoveConfig::default(), None).is_err());
}

#[test]
fn bands_are_decomposed_independently() {
    let fx = small_fixture();
    let cfg = RemoveConfig::default();
    let both = decompose(&fx.contaminated, &cfg.solver).unwrap();
    let alone = ImageStack::new(vec![fx.contaminated.band(1).clone()], StackMeta::indexed(4, 1.0)).unwrap();
    let single = decompose(&alone, &cfg.solver).unwrap();
    assert_eq!(both[1].cloud, single[0].cloud);
    assert_eq!(both[1].iters_used, single[0].iters_used);
}

#[test]
fn partial_reference_leaves_uncovered_pixels_at_preliminary_values() {
    let scene = piecewise_scene(&SceneConfig {
        rows: 16,
        cols: 16,
        bands: 1,
        frames: 2,
        cells: 4,
        ..SceneConfig::default()
    })
    .unwrap();
    let mut masks = vec![LabelMask::clear(0, 16, 16), LabelMask::clear(1, 16, 16)];
    for r in 4..10 {
        for c in 4..10 {
            masks[1].set(r, c, Label::Cloud);
        }
    }
    // frame 0 is cloudy over the left half of that block
    for r in 4..10 {
        for c in 2..7 {
            masks[0].set(r, c, Label::Cloud);
        }
    }
    let out = run_remove(&scene, &RemoveConfig::default(), Some(masks.clone())).unwrap();
    let report = out.cloning.as_ref().unwrap();
    let region = report.regions.iter().find(|r| r.frame == 1).unwrap();
    assert!(region.partial);
    assert_eq!(region.reference, Some(0));
    assert_eq!(region.uncovered_px, 6 * 3);
    for r in 4..10 {
        for c in 4..7 {
            let q = r * 16 + c;
            assert_eq!(out.restored.plane(0, 1)[q], out.preliminary.plane(0, 1)[q]);
        }
    }
}

#[test]
fn outputs_are_written_and_reproducible() {
    let fx = small_fixture();
    let cfg = RemoveConfig {
        poisson: PoissonConfig::default(),
        ..exact_masks()
    };
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for d in &dirs {
        let out = run_remove(&fx.contaminated, &cfg, None).unwrap();
        write_remove_outputs(&out, &cfg, d.path()).unwrap();
    }
    let files = [
        "restored/manifest.json",
        "restored/f003_b01.raw",
        "masks/frame002.pgm",
        "convergence.csv",
        "config.json",
        "report.json",
    ];
    for f in files {
        let a = fs::read(dirs[0].path().join(f)).unwrap();
        let b = fs::read(dirs[1].path().join(f)).unwrap();
        assert_eq!(a, b, "{f} differs between runs");
    }
    let echoed: RemoveConfig =
        serde_json::from_slice(&fs::read(dirs[0].path().join("config.json")).unwrap()).unwrap();
    assert_eq!(echoed, cfg);
    let report: serde_json::Value =
        serde_json::from_slice(&fs::read(dirs[0].path().join("report.json")).unwrap()).unwrap();
    assert_eq!(report["converged"], true);
}

#[test]
fn convergence_log_has_one_row_per_iteration() {
    let fx = small_fixture();
    let out = run_remove(&fx.contaminated, &exact_masks(), None).unwrap();
    let csv = convergence_csv(&out.bands);
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("band,iter,mu,rel_change,r_group,r_dx,r_dy,r_dt"));
    let rows = lines.count();
    assert_eq!(rows, out.bands.iter().map(|b| b.iters_used).sum::<usize>());
}
