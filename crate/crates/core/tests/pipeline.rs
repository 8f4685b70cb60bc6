use std::fs;
use std::path::Path;

use emsc_core::corpus::{build_corpus, CorpusManifest, MANIFEST_FILE};
use emsc_core::eval::{run_benchmark, CSV_HEADER};
use emsc_core::pipeline::{load_config, run_pipeline, PipelineConfig, BENCHMARK_FILE, FAILED_MARKER, SUMMARY_FILE};
use serde_json::json;

fn small_config(out: &Path) -> PipelineConfig {
    let doc = json!({
        "timing": {
            "h_active": 512, "h_front_porch": 16, "h_sync": 48, "h_back_porch": 24,
            "v_active": 256, "v_front_porch": 4, "v_sync": 2, "v_back_porch": 12,
            "pixel_clock_hz": 10.0e6
        },
        "sync": {"kind": "ground_truth"},
        "channel": {"attenuations_db": [0.0, 6.0], "noise_sigma": 0.0},
        "sample": {"n_chars": 12, "size_pt_range": [16, 28]},
        "frames": 2,
        "plant": {"text": "SECRET", "x": 290, "y": 100, "stride": 2},
        "alarm": {"watchlist": ["SECRET"], "max_errors": 1},
        "dataset": {"n_samples": 2},
        "seed": 5,
    });
    let overrides = [format!("output_dir={}", out.display())];
    load_config(Some(doc), &overrides).unwrap()
}

#[test]
fn clean_run_recovers_everything() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let report = run_pipeline(&cfg).unwrap();
    assert_eq!(report.frames_generated, 4);
    assert_eq!(report.frames_skipped, 0);
    assert_eq!(report.levels.len(), 2);
    for level in &report.levels {
        assert!(level.metrics.f_score > 0.95, "{level:?}");
        assert_eq!(level.n_patches, 4);
    }
    assert_eq!(report.alarms.len(), 4);
    assert!(report.alarms.iter().all(|a| a.correct()), "{:?}", report.alarms);
    assert!(report.any_alarm());

    let csv = fs::read_to_string(dir.path().join(BENCHMARK_FILE)).unwrap();
    assert_eq!(csv.lines().next(), Some(CSV_HEADER));
    assert_eq!(csv.lines().count(), 3);
    assert!(dir.path().join(SUMMARY_FILE).is_file());
    assert!(!dir.path().join(FAILED_MARKER).exists());
    let frame = dir.path().join("level0_0dB/frame0000");
    for name in ["reference.pgm", "labels.jsonl", "raster.pgm", "recovered.pgm", "alarm.json"] {
        assert!(frame.join(name).is_file(), "missing {name}");
    }
}

#[test]
fn failed_run_leaves_a_marker() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    fs::create_dir(dir.path().join("config.json")).unwrap();
    assert!(run_pipeline(&cfg).is_err());
    assert!(dir.path().join(FAILED_MARKER).is_file());
}

#[test]
fn invalid_config_fails_before_writing() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let mut cfg = small_config(&out);
    cfg.channel.attenuations_db = vec![-3.0];
    assert!(run_pipeline(&cfg).is_err());
    assert!(!out.exists());
}

#[test]
fn corpus_feeds_the_benchmark() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let manifest = build_corpus(&cfg.corpus_config(), dir.path()).unwrap();
    assert_eq!(manifest.frames_generated, 4);
    assert_eq!(manifest.n_patches(), 8);
    let loaded = CorpusManifest::load(dir.path().join(MANIFEST_FILE)).unwrap();
    assert_eq!(loaded, manifest);
    for entry in &manifest.entries {
        for p in &entry.patches {
            assert!(dir.path().join(&p.sample_path).is_file());
            assert!(dir.path().join(&p.label_path).is_file());
        }
    }
    let report = run_benchmark(&manifest, dir.path(), &cfg.methods()).unwrap();
    assert_eq!(report.rows.len(), 1);
    assert_eq!(report.rows[0].n_patches, 8);
    assert!(report.rows[0].f_score > 0.95, "{:?}", report.rows[0]);
}
