use std::path::{Path, PathBuf};

use forensics_core::pipeline::{Run, RunConfig, Stage, CHECKPOINT_FILE, PROBE_FILE, RUN_FILE};
use forensics_core::Error;

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

fn config(cache: &Path) -> RunConfig {
    let mut cfg = RunConfig::from_file(fixtures().join("three_class.toml")).unwrap();
    cfg.cache_dir = cache.to_path_buf();
    cfg
}

#[test]
fn three_class_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let run = Run::open(config(dir.path()), None).unwrap();
    let report = run.run_all().unwrap();
    assert!(report.degraded.is_empty(), "{:?}", report.degraded);
    assert_eq!(report.labels.keys().collect::<Vec<_>>(), ["anger", "fear", "joy"]);
    for (label, r) in &report.labels {
        assert_eq!(r.samples, 100);
        assert!(r.consistency >= 0.90, "{label}: {}", r.consistency);
        assert!(!r.prototypes.is_empty());
        let d = r.diversity;
        for v in [d.bertscore_f1, d.label_consistency, d.self_bleu] {
            assert!((0.0..=1.0).contains(&v));
        }
    }
    assert_eq!(report.geometry.len(), 1);
    for f in ["table1_consistency.csv", "table2_descriptions.csv", "table3_geometry.csv", "table4_sampler.csv", "table6_alignment.csv", "projection.csv"] {
        assert!(dir.path().join(f).is_file(), "{f}");
    }
}

#[test]
fn report_without_artifacts_names_prerequisite() {
    let dir = tempfile::tempdir().unwrap();
    let run = Run::open(config(dir.path()), None).unwrap();
    match run.run_stage(Stage::Report) {
        Err(Error::MissingStageArtifact { stage, .. }) => assert_eq!(stage, "select"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn resume_after_budget_matches_uninterrupted_run() {
    let fresh = tempfile::tempdir().unwrap();
    let expected = std::fs::read(
        Run::open(config(fresh.path()), None)
            .unwrap()
            .run_all()
            .map(|_| fresh.path().join("report.json"))
            .unwrap(),
    )
    .unwrap();

    let dir = tempfile::tempdir().unwrap();
    let mut limited = config(dir.path());
    limited.budget = Some(2000);
    let err = Run::open(limited, None).unwrap().run_all().unwrap_err();
    assert!(matches!(err, Error::BudgetExhausted { budget: 2000, dispatched: 2000 }), "{err:?}");
    let checkpoint: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join(CHECKPOINT_FILE)).unwrap()).unwrap();
    assert_eq!(checkpoint["dispatched_total"], 2000);

    // Budget is a transport knob, so the cache survives and the resume reuses it.
    let run = Run::open(config(dir.path()), None).unwrap();
    run.run_all().unwrap();
    assert!(!dir.path().join(CHECKPOINT_FILE).exists());
    assert_eq!(std::fs::read(dir.path().join("report.json")).unwrap(), expected);
}

#[test]
fn seed_change_discards_stage_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let run = Run::open(config(dir.path()), None).unwrap();
    run.run_stage(Stage::Probe).unwrap();
    assert!(dir.path().join(Stage::Probe.artifact()).exists());
    assert!(dir.path().join(PROBE_FILE).exists());
    drop(run);

    let run = Run::open(config(dir.path()), Some(7)).unwrap();
    assert_eq!(run.meta.seed, 7);
    assert!(!run.seed_drawn);
    assert!(!dir.path().join(Stage::Probe.artifact()).exists());
    assert!(!dir.path().join(PROBE_FILE).exists());
}

#[test]
fn recorded_seed_is_reused_and_missing_seed_is_drawn() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(dir.path());
    cfg.seed = None;
    let first = Run::open(cfg.clone(), None).unwrap();
    assert!(first.seed_drawn);
    let seed = first.meta.seed;
    drop(first);
    assert!(dir.path().join(RUN_FILE).exists());
    let second = Run::open(cfg, None).unwrap();
    assert!(!second.seed_drawn);
    assert_eq!(second.meta.seed, seed);
}
