//! Whole-pipeline runs on a tiny two-category configuration.

mod common;

use std::fs;
use std::path::Path;

use mvad::encoder::{load_cache, Modality};
use mvad::pipeline::{run_sweep, Pipeline, Stage};
use mvad::synth::Split;
use mvad::Error;

use common::tiny_config;

fn full_run(dir: &Path) -> Pipeline {
    let p = Pipeline::new(tiny_config(dir));
    let reports = p.run(&Stage::ALL).unwrap().expect("eval ran");
    assert_eq!(reports.len(), 3);
    p
}

fn artifacts(p: &Pipeline) -> Vec<Vec<u8>> {
    [p.layout.report("txt"), p.layout.report("csv"), p.layout.aligner(), p.layout.prompts()]
        .iter()
        .map(|f| fs::read(f).unwrap())
        .collect()
}

#[test]
fn identical_configs_give_identical_bytes() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let (pa, pb) = (full_run(a.path()), full_run(b.path()));
    assert_eq!(artifacts(&pa), artifacts(&pb));
    let text = String::from_utf8(fs::read(pa.layout.report("txt")).unwrap()).unwrap();
    assert!(text.contains("image_auroc"), "{text}");
}

#[test]
fn rerunning_a_stage_reproduces_its_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let p = full_run(dir.path());
    let before = artifacts(&p);
    fs::remove_file(p.layout.aligner()).unwrap();
    fs::remove_file(p.layout.prompts()).unwrap();
    fs::remove_dir_all(p.layout.experiment.join("eval")).unwrap();
    p.run(&[Stage::Align, Stage::Prompt, Stage::Infer, Stage::Eval]).unwrap();
    assert_eq!(artifacts(&p), before);
}

#[test]
fn test_samples_are_scored_without_rgb() {
    let dir = tempfile::tempdir().unwrap();
    let p = full_run(dir.path());
    for e in p.manifest().unwrap() {
        let sets = load_cache(&p.layout.features(&e)).unwrap();
        let has_rgb = sets.iter().any(|s| s.modality == Modality::Rgb);
        assert_eq!(has_rgb, e.split == Split::Train, "{}", e.path.display());
    }
    // Test categories differ from the training category.
    let train = p.train_entries().unwrap();
    let test = p.test_entries().unwrap();
    assert!(train.iter().all(|e| e.path.starts_with("sphere")));
    assert!(test.iter().all(|e| e.path.starts_with("box")));
}

#[test]
fn inference_before_training_names_the_missing_stage() {
    let dir = tempfile::tempdir().unwrap();
    let p = Pipeline::new(tiny_config(dir.path()));
    match p.run(&[Stage::Render]) {
        Err(e @ Error::MissingArtifact { stage: "gen", .. }) => assert_eq!(e.exit_code(), 3),
        other => panic!("expected a missing manifest, got {other:?}"),
    }
    p.run(&[Stage::Gen, Stage::Render, Stage::Encode]).unwrap();
    match p.run(&[Stage::Infer]) {
        Err(Error::MissingArtifact { stage, path }) => {
            assert_eq!(stage, "align");
            assert_eq!(path, p.layout.aligner());
        }
        other => panic!("expected a missing aligner, got {other:?}"),
    }
}

#[test]
fn weight_export_and_bench_run_on_trained_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny_config(dir.path());
    cfg.bench_reps = 3;
    let p = Pipeline::new(cfg);
    p.run(&Stage::ALL).unwrap();
    let written = p.export_weights().unwrap();
    assert_eq!(written, p.train_entries().unwrap().len() * 3);
    let first = &p.train_entries().unwrap()[0];
    let w = mvad::metrics::load_scores(&p.layout.scr_map(first, 0)).unwrap();
    assert_eq!(w.len(), 9);
    assert!(w.iter().all(|&x| (1.0..=2.0).contains(&x)));
    let bench = p.bench().unwrap();
    assert_eq!((bench.reps, bench.views), (3, 3));
    assert!(bench.min_ms <= bench.median_ms && bench.median_ms <= bench.max_ms);
    assert!(p.layout.bench().exists());
}

#[test]
fn sweep_writes_one_report_per_point() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny_config(dir.path());
    cfg.sweep.view_counts = vec![1, 2];
    Pipeline::new(cfg.clone()).run(&[Stage::Gen]).unwrap();
    let points = run_sweep(&cfg).unwrap();
    assert_eq!(points.iter().map(|p| p.views).collect::<Vec<_>>(), vec![1, 2]);
    assert!(points.iter().all(|p| p.reports.len() == 3));
    let summary = fs::read_to_string(dir.path().join("sweep").join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 1 + 2 * 3);
}
