//! Contracts checked against independent computations: the simulator's
//! accuracy and calibration, temperature recovery, and fusion behavior on
//! constructed pools.

use logitprod::ablation::{run_seed, AblationConfig};
use logitprod::calibration::fit_temperatures;
use logitprod::data::{argmax, softmax, LogitRecord, SplitRole};
use logitprod::fusion::FusionMode;
use logitprod::pipeline::{cv_splits, fit_calibration, fit_mode, mean_task_loss, predict};
use logitprod::gate::TrainConfig;
use logitprod::simulator::{generate_pool, PoolSpec};

fn heterogeneous(n: usize, seed: u64) -> PoolSpec {
    PoolSpec::classification(4, n, vec![0.60, 0.68, 0.75, 0.82, 0.90], vec![0.5, 1.0, 1.0, 2.0, 3.0], 0.3, seed)
}

fn argmax_accuracy(records: &[LogitRecord], m: usize) -> f64 {
    let hits = records
        .iter()
        .filter(|r| argmax(&r.logits[m]) == r.label.class_index().unwrap())
        .count();
    hits as f64 / records.len() as f64
}

#[test]
fn simulated_accuracy_matches_the_spec() {
    let spec = heterogeneous(100_000, 21);
    let (ds, _) = generate_pool(&spec).unwrap();
    for (m, acc) in spec.accuracies.iter().enumerate() {
        let emp = argmax_accuracy(&ds.records, m);
        assert!((emp - acc).abs() < 0.01, "expert {m}: {emp} vs {acc}");
    }
}

#[test]
fn simulated_accuracy_holds_per_survival_bin() {
    let mut spec = PoolSpec::classification(4, 40_000, vec![0.7, 0.85], vec![1.0, 2.0], 0.3, 5);
    spec.task = "survival".into();
    let (_, diag) = generate_pool(&spec).unwrap();
    for m in 0..2 {
        assert!((diag.accuracy(m) - spec.accuracies[m]).abs() < 0.01);
    }
}

#[test]
fn simulated_experts_are_calibrated_after_removing_the_injected_temperature() {
    let spec = heterogeneous(100_000, 22);
    let (ds, _) = generate_pool(&spec).unwrap();
    for m in 0..spec.m {
        let mut bins = vec![(0.0f64, 0.0f64, 0usize); 10];
        for r in &ds.records {
            let z: Vec<f64> = r.logits[m].iter().map(|v| v / spec.temperatures_true[m]).collect();
            let p = softmax(&z).unwrap();
            let conf = p.values()[p.argmax()];
            let b = ((conf * 10.0) as usize).min(9);
            bins[b].0 += conf;
            bins[b].1 += (p.argmax() == r.label.class_index().unwrap()) as u8 as f64;
            bins[b].2 += 1;
        }
        // expected calibration error of the reliability diagram
        let ece: f64 = bins.iter().map(|(conf, hits, _)| (conf - hits).abs()).sum::<f64>() / ds.records.len() as f64;
        assert!(ece < 0.02, "expert {m}: ECE {ece}");
    }
}

#[test]
fn temperature_scales_with_the_logits() {
    let (ds, _) = generate_pool(&heterogeneous(4000, 23)).unwrap();
    let calib: Vec<&LogitRecord> = ds.records.iter().collect();
    let task = ds.meta.task;
    let base = fit_temperatures(&calib, task).unwrap();
    let scaled: Vec<LogitRecord> = ds
        .records
        .iter()
        .map(|r| LogitRecord {
            logits: r.logits.iter().map(|row| row.iter().map(|v| 2.0 * v).collect()).collect(),
            ..r.clone()
        })
        .collect();
    let doubled = fit_temperatures(&scaled.iter().collect::<Vec<_>>(), task).unwrap();
    for (a, b) in base.temperatures.iter().zip(&doubled.temperatures) {
        let expected = (2.0 * a).clamp(0.05, 20.0);
        assert!((b - expected).abs() / expected < 0.05, "{b} vs {expected}");
    }
}

#[test]
fn identical_experts_tie_across_fusion_modes() {
    let mut spec = PoolSpec::classification(3, 600, vec![0.8; 3], vec![1.5; 3], 1.0, 3);
    spec.jitter = 0.0;
    let mut cfg = AblationConfig::new(FusionMode::ALL.to_vec(), vec![3]);
    cfg.gate.max_epochs = 20;
    let r = run_seed(&spec, 3, &cfg).unwrap();
    let single = r.methods["expert_0"].loss;
    for mode in [FusionMode::Mean, FusionMode::UniformProduct, FusionMode::LogitProd, FusionMode::LearnableProduct] {
        let loss = r.methods[mode.name()].loss;
        assert!((loss - single).abs() < 1e-9, "{mode}: {loss} vs {single}");
    }
    let acc = r.methods["expert_0"].acc;
    for mode in FusionMode::ALL {
        assert_eq!(r.methods[mode.name()].acc, acc, "{mode}");
    }
}

#[test]
fn learnable_modes_suppress_an_adversarial_expert() {
    // expert 1 is confidently wrong most of the time and only partly fixable by
    // calibration; a gate can learn to ignore it
    let mut spec = PoolSpec::classification(4, 2000, vec![0.85, 0.26], vec![1.0, 1.0], 0.0, 9);
    spec.confidence_spread = 0.0;
    let cfg = AblationConfig::new(FusionMode::ALL.to_vec(), vec![9]);
    let r = run_seed(&spec, 9, &cfg).unwrap();
    let loss = |m: FusionMode| r.methods[m.name()].loss;
    for learned in [FusionMode::LogitProd, FusionMode::LearnableSum, FusionMode::LearnableProduct] {
        for fixed in [FusionMode::Mean, FusionMode::UniformProduct, FusionMode::MajorityVote] {
            assert!(loss(learned) < loss(fixed), "{learned} {} vs {fixed} {}", loss(learned), loss(fixed));
        }
    }
}

#[test]
fn trained_logitprod_fits_better_than_the_uniform_product() {
    let (ds, _) = generate_pool(&heterogeneous(2000, 31)).unwrap();
    let task = ds.meta.task;
    for split in cv_splits(&ds.records, 0.1, 31).unwrap().iter().take(2) {
        let calib = fit_calibration(&ds.records, split, task).unwrap();
        let train: Vec<&LogitRecord> = split.train.iter().map(|&i| &ds.records[i]).collect();
        let cfg = TrainConfig { seed: 31, ..Default::default() };
        let loss = |mode| {
            let fitted = fit_mode(&ds.records, split, task, &calib, mode, &cfg).unwrap();
            mean_task_loss(&train, &predict(&train, &fitted, task).unwrap()).unwrap()
        };
        let (lp, up) = (loss(FusionMode::LogitProd), loss(FusionMode::UniformProduct));
        assert!(lp <= up, "fold {}: logitprod {lp} > uniform product {up}", split.fold);
    }
}

#[test]
fn calibration_roles_come_from_training_folds_only() {
    let (ds, _) = generate_pool(&heterogeneous(500, 4)).unwrap();
    assert!(ds.with_role(SplitRole::Test).iter().all(|r| r.fold == 0));
    for split in cv_splits(&ds.records, 0.1, 4).unwrap() {
        for &i in split.calibration.iter().chain(&split.train) {
            let f = ds.records[i].fold as usize;
            assert!(f != split.fold && f != (split.fold + 1) % 5);
        }
    }
}
