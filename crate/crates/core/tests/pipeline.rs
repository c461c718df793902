//! End-to-end runs of the library pipeline on the smoke profile, scaled
//! down to a handful of synthetic images.

use std::sync::Arc;
use std::time::Instant;

use stitchlab::config::{BudgetOverrides, BudgetProfile, PartialConfig, RunConfig};
use stitchlab::experiments::{
    parse_matrix_csv, read_entry, regime_tag, reproduce_entry, run_full_sweep,
    run_image_generation, run_mse_study, zoo_eval, zoo_train, ExperimentDir, MatrixRegime,
    MseScope, MSE_COLUMNS,
};
use stitchlab::training::TrainingRegime;
use stitchlab::zoo::{build_model, load_checkpoint, Provenance};
use stitchlab::Error;

fn config(out: &std::path::Path, regimes: Vec<MatrixRegime>) -> RunConfig {
    PartialConfig {
        out: Some(out.to_path_buf()),
        profile: Some(BudgetProfile::Smoke),
        regimes: Some(regimes),
        images_per_point: Some(2),
        budget: BudgetOverrides {
            train_examples: Some(16),
            test_examples: Some(8),
            ..BudgetOverrides::default()
        },
        ..PartialConfig::default()
    }
    .resolve()
    .unwrap()
}

#[test]
fn sweep_requires_trained_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), vec![MatrixRegime::TrainedTrained]);
    match run_full_sweep::<f32>(&cfg).unwrap_err() {
        Error::MissingCheckpoints(missing) => assert_eq!(missing.len(), 2),
        e => panic!("{e}"),
    }
    // Random-only regimes need no checkpoints.
    let cfg = config(dir.path(), vec![MatrixRegime::RandomRandom]);
    let out = run_full_sweep::<f32>(&cfg).unwrap();
    assert_eq!(out.len(), 1);
    assert!(out[0].path.exists());
}

#[test]
fn smoke_pipeline_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), vec![MatrixRegime::TrainedTrained]);
    let exp = ExperimentDir::new(dir.path());

    let zoo = zoo_train::<f32>(&cfg).unwrap();
    assert_eq!(zoo.len(), 2);
    assert!(zoo.iter().all(|r| r.provenance == Provenance::Trained));
    assert!(exp.zoo_dir().join("summary.csv").exists());
    let controls = zoo_eval::<f32>(&cfg, true).unwrap();
    assert!(controls
        .iter()
        .all(|r| r.provenance == Provenance::RandomControl));

    let first = run_full_sweep::<f32>(&cfg).unwrap();
    assert_eq!(first.len(), 1);
    let csv = std::fs::read_to_string(&first[0].path).unwrap();
    let grid = parse_matrix_csv(&csv, "matrix").unwrap();
    assert_eq!((grid.len(), grid[0].len()), (5, 5));
    assert!(grid
        .iter()
        .flatten()
        .all(|v| v.is_some_and(|a| (0.0..=1.0).contains(&a))));
    assert!(first[0].triangle.is_some());

    // Completed entries are reused: same bytes, much faster.
    let started = Instant::now();
    let second = run_full_sweep::<f32>(&cfg).unwrap();
    let resumed = started.elapsed();
    assert_eq!(std::fs::read_to_string(&second[0].path).unwrap(), csv);
    assert!(resumed.as_secs_f64() < 20.0, "resume took {resumed:?}");

    // Any entry can be re-evaluated from its checkpoint alone.
    let sender = Arc::new(load_checkpoint::<f32>(&exp.model(&zoo[0].label)).unwrap());
    let receiver = Arc::new(load_checkpoint::<f32>(&exp.model(&zoo[1].label)).unwrap());
    let key = first[0].key.clone();
    assert!(key.ends_with(&regime_tag(
        MatrixRegime::TrainedTrained,
        TrainingRegime::Task
    )));
    let entry = exp.entry(&key, 2, 3);
    let (_, test) = cfg.load_data().unwrap();
    let (recorded, recomputed) =
        reproduce_entry(&entry, sender.clone(), receiver.clone(), &test).unwrap();
    assert_eq!(recorded, recomputed);
    assert_eq!(grid[2][3], Some(recorded));
    let m = read_entry(&entry).unwrap().unwrap();
    assert_eq!((m.i, m.j), (2, Some(3)));
    // A different receiver is rejected.
    let other = Arc::new(build_model::<f32>(sender.arch(), 77));
    assert!(reproduce_entry(&entry, sender.clone(), other, &test).is_err());

    let report = run_mse_study::<f32>(&cfg, &[MseScope::Diagonals, MseScope::All]).unwrap();
    assert_eq!(report.pairs.len(), 25);
    assert_eq!(
        report.study.table(MseScope::Diagonals).unwrap().samples,
        5 * test.len()
    );
    assert_eq!(report.study.all.samples, 25 * test.len());
    for scope in ["diagonals", "all"] {
        let text =
            std::fs::read_to_string(exp.stats_dir().join(format!("mse_{scope}.csv"))).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0].split(',').collect::<Vec<_>>(), MSE_COLUMNS);
        assert_eq!(lines[1].split(',').count(), 12);
    }

    let images = run_image_generation::<f32>(&cfg).unwrap();
    assert_eq!(images.len(), 5 * 2);
    let png = image::open(&images[0]).unwrap();
    assert_eq!((png.width(), png.height()), (64, 32));
}
