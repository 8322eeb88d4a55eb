use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use logitprod::data::{Dataset, SplitRole};
use logitprod::fusion::{FusionMode, PredictionLine};
use logitprod::gate::TrainConfig;
use logitprod::pipeline::{
    cv_splits, fit_calibration, fit_mode, role_split, run_pipeline, DataConfig, PipelineConfig, SplitScheme,
};
use logitprod::simulator::{generate_pool, PoolSpec};

fn small_spec(task: &str) -> PoolSpec {
    let mut spec = PoolSpec::classification(3, 600, vec![0.6, 0.75, 0.9], vec![0.5, 1.0, 2.0], 0.3, 1);
    spec.task = task.into();
    spec
}

fn config(spec: PoolSpec, mode: FusionMode) -> PipelineConfig {
    PipelineConfig {
        data: DataConfig {
            simulate: Some(spec),
            ..Default::default()
        },
        calibration: Default::default(),
        gate: TrainConfig {
            max_epochs: 30,
            ..Default::default()
        },
        fusion_mode: mode,
        metrics: Default::default(),
        seed: 5,
    }
}

fn prediction_ids(dir: &Path) -> Vec<String> {
    fs::read_to_string(dir.join("predictions.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str::<PredictionLine>(l).unwrap().id)
        .collect()
}

#[test]
fn pipeline_writes_every_fold_and_predicts_each_record_once() {
    let out = tempfile::tempdir().unwrap();
    let cfg = config(small_spec("classification"), FusionMode::LogitProd);
    let summary = run_pipeline(&cfg, Some(out.path())).unwrap();
    assert_eq!(summary.n_folds, 5);
    let mut seen = Vec::new();
    for f in 0..5 {
        let dir = out.path().join(format!("fold_{f}"));
        for file in ["calibration.json", "gate.json", "trace.csv", "predictions.jsonl", "metrics.json"] {
            assert!(dir.join(file).exists(), "fold {f} lacks {file}");
        }
        seen.extend(prediction_ids(&dir));
    }
    let unique: BTreeSet<_> = seen.iter().collect();
    assert_eq!(seen.len(), 600);
    assert_eq!(unique.len(), 600);
    assert!(out.path().join("summary.json").exists());
    let acc = &summary.aggregate["acc"];
    assert_eq!(acc.n, 5);
    assert!(acc.mean > 0.8);
}

#[test]
fn non_learned_modes_skip_training() {
    let out = tempfile::tempdir().unwrap();
    let summary = run_pipeline(&config(small_spec("classification"), FusionMode::Mean), Some(out.path())).unwrap();
    assert!(summary.folds.iter().all(|f| f.best_epoch.is_none()));
    assert!(!out.path().join("fold_0/gate.json").exists());
    assert!(!out.path().join("fold_0/trace.csv").exists());
}

#[test]
fn survival_pipeline_reports_c_index() {
    let mut cfg = config(small_spec("survival"), FusionMode::LogitProd);
    cfg.metrics.single_experts = true;
    let summary = run_pipeline(&cfg, None).unwrap();
    let c = &summary.aggregate["c_index"];
    assert!(c.mean > 0.5 && c.mean <= 1.0);
    assert!(!summary.aggregate.contains_key("auc"));
    assert_eq!(summary.folds[0].single_experts.len(), 3);
}

#[test]
fn test_records_never_reach_calibration_or_training() {
    let (ds, _) = generate_pool(&small_spec("classification")).unwrap();
    let task = ds.meta.task;
    let cfg = TrainConfig {
        max_epochs: 10,
        ..Default::default()
    };
    let splits = cv_splits(&ds.records, 0.1, 2).unwrap();
    let split = &splits[2];
    let mut poisoned = ds.records.clone();
    for &i in &split.test {
        poisoned[i].logits.iter_mut().flatten().for_each(|z| *z = -*z * 50.0);
    }
    let fit = |records: &[_]| {
        let calib = fit_calibration(records, split, task).unwrap();
        let fitted = fit_mode(records, split, task, &calib, FusionMode::LogitProd, &cfg).unwrap();
        (calib, fitted.gates.unwrap(), fitted.trace.unwrap())
    };
    assert_eq!(fit(&ds.records), fit(&poisoned));
}

#[test]
fn folds_are_stratified_by_class() {
    let (ds, _) = generate_pool(&small_spec("classification")).unwrap();
    for c in 1..=3 {
        let n_c = ds.records.iter().filter(|r| r.label.class_index() == Some(c - 1)).count() as f64;
        for f in 0..5 {
            let in_fold = ds
                .records
                .iter()
                .filter(|r| r.fold == f && r.label.class_index() == Some(c - 1))
                .count() as f64;
            assert!((in_fold - n_c / 5.0).abs() <= 1.0, "class {c} fold {f}: {in_fold} of {n_c}");
        }
    }
}

#[test]
fn role_split_needs_every_role() {
    let (mut ds, _) = generate_pool(&small_spec("classification")).unwrap();
    assert!(role_split(&ds.records).is_ok());
    ds.records.iter_mut().for_each(|r| {
        if r.split_role == SplitRole::Validation {
            r.split_role = SplitRole::Train;
        }
    });
    assert!(role_split(&ds.records).is_err());
}

#[test]
fn role_scheme_runs_a_single_fold() {
    let mut cfg = config(small_spec("classification"), FusionMode::UniformProduct);
    cfg.data.split = SplitScheme::Roles;
    let summary = run_pipeline(&cfg, None).unwrap();
    assert_eq!(summary.n_folds, 1);
}

#[test]
fn config_task_must_match_the_data() {
    let mut cfg = config(small_spec("classification"), FusionMode::Mean);
    cfg.data.task = Some("survival".into());
    assert!(run_pipeline(&cfg, None).is_err());
}

#[test]
fn config_file_round_trip_and_relative_paths() {
    let dir = tempfile::tempdir().unwrap();
    let (ds, _) = generate_pool(&small_spec("classification")).unwrap();
    ds.save(&dir.path().join("pool.jsonl")).unwrap();
    fs::write(
        dir.path().join("cfg.json"),
        r#"{"data": {"path": "pool.jsonl"}, "fusion_mode": "mean", "seed": 3}"#,
    )
    .unwrap();
    let cfg = PipelineConfig::load(&dir.path().join("cfg.json")).unwrap();
    assert_eq!(cfg.gate, TrainConfig::default());
    let loaded: Dataset = cfg.load_dataset().unwrap();
    assert_eq!(loaded, ds);

    fs::write(dir.path().join("bad.json"), r#"{"data": {"path": "pool.jsonl", "extra": 1}}"#).unwrap();
    assert!(PipelineConfig::load(&dir.path().join("bad.json")).is_err());
}
