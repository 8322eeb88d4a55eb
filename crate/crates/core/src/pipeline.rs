//! Cross-validated calibrate → train → fuse → evaluate runs.
//!
//! Each fold draws its calibration subset from that fold's training
//! records only; test records are used for nothing but the final
//! predictions. Every split is index-based and checked for disjointness
//! before anything is fitted.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::calibration::{fit_temperatures, CalibrationState};
use crate::cues::calibrated_units;
use crate::data::{validate_dataset, Dataset, Label, LogitRecord, SplitRole, TaskKind, PROB_FLOOR};
use crate::error::{Error, Result};
use crate::fusion::{fuse_units, product_fuse, FusedPrediction, FusionMode, PredictionLine};
use crate::gate::{train_gate_split, GateParameters, SimplexWeights, TrainConfig, TrainingTrace};
use crate::metrics::{c_index, PerfSummary};
use crate::simulator::{generate_pool, PoolSpec};
use crate::survival::{risk_score, HazardCurve, EVENT};

// ─── splitting ──────────────────────────────────────────────────────────────

fn strata_groups(strata: &[usize]) -> BTreeMap<usize, Vec<usize>> {
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, s) in strata.iter().enumerate() {
        groups.entry(*s).or_default().push(i);
    }
    groups
}

/// Stratified fold tags: each stratum is shuffled and dealt round-robin,
/// continuing the rotation across strata, so every fold holds within one
/// sample of its share of each stratum.
pub fn stratified_folds(strata: &[usize], n_folds: usize, seed: u64) -> Vec<u32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut folds = vec![0u32; strata.len()];
    let mut next = 0usize;
    for (_, mut members) in strata_groups(strata) {
        members.shuffle(&mut rng);
        for i in members {
            folds[i] = (next % n_folds) as u32;
            next += 1;
        }
    }
    folds
}

/// A seeded, stratified subset holding `fraction` of each stratum (rounded,
/// at least one sample overall). Returns sorted positions.
pub fn stratified_subset(strata: &[usize], fraction: f64, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(7));
    let mut picked = Vec::new();
    let groups = strata_groups(strata);
    for members in groups.values() {
        let mut members = members.clone();
        members.shuffle(&mut rng);
        let take = (members.len() as f64 * fraction).round() as usize;
        picked.extend_from_slice(&members[..take.min(members.len())]);
    }
    if picked.is_empty() {
        if let Some(largest) = groups.values().max_by_key(|m| m.len()) {
            picked.push(largest[0]);
        }
    }
    picked.sort_unstable();
    picked
}

/// Record indices of one fold, by role.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FoldSplit {
    pub fold: usize,
    pub train: Vec<usize>,
    pub calibration: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

impl FoldSplit {
    /// Fails unless the four roles are disjoint and nonempty.
    pub fn check(&self) -> Result<()> {
        let mut owner: BTreeMap<usize, &str> = BTreeMap::new();
        for (name, idx) in [
            ("train", &self.train),
            ("calibration", &self.calibration),
            ("validation", &self.validation),
            ("test", &self.test),
        ] {
            if idx.is_empty() {
                return Err(Error::Invalid(format!("fold {} has no {name} records", self.fold)));
            }
            for i in idx {
                if let Some(prev) = owner.insert(*i, name) {
                    return Err(Error::Invalid(format!(
                        "fold {}: record {i} is both {prev} and {name}",
                        self.fold
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Cross-validation splits from the records' fold tags: fold `f` is test,
/// fold `f+1` validation, and a stratified `calib_fraction` of the rest is
/// held out for calibration.
pub fn cv_splits(records: &[LogitRecord], calib_fraction: f64, seed: u64) -> Result<Vec<FoldSplit>> {
    let n_folds = records.iter().map(|r| r.fold as usize + 1).max().unwrap_or(0);
    if n_folds < 3 {
        return Err(Error::Invalid(format!(
            "cross-validation needs at least 3 folds, data has {n_folds}"
        )));
    }
    (0..n_folds)
        .map(|f| {
            let val_fold = (f + 1) % n_folds;
            let mut split = FoldSplit {
                fold: f,
                train: Vec::new(),
                calibration: Vec::new(),
                validation: Vec::new(),
                test: Vec::new(),
            };
            let mut pool = Vec::new();
            for (i, r) in records.iter().enumerate() {
                match r.fold as usize {
                    x if x == f => split.test.push(i),
                    x if x == val_fold => split.validation.push(i),
                    _ => pool.push(i),
                }
            }
            let strata: Vec<usize> = pool.iter().map(|&i| records[i].label.stratum()).collect();
            let held = stratified_subset(&strata, calib_fraction, seed.wrapping_add(f as u64));
            let mut is_held = vec![false; pool.len()];
            held.iter().for_each(|&j| is_held[j] = true);
            for (j, i) in pool.into_iter().enumerate() {
                if is_held[j] {
                    split.calibration.push(i);
                } else {
                    split.train.push(i);
                }
            }
            split.check()?;
            Ok(split)
        })
        .collect()
}

/// The single split given by the records' role tags.
pub fn role_split(records: &[LogitRecord]) -> Result<FoldSplit> {
    let pick = |role| -> Vec<usize> {
        (0..records.len()).filter(|&i| records[i].split_role == role).collect()
    };
    let split = FoldSplit {
        fold: 0,
        train: pick(SplitRole::Train),
        calibration: pick(SplitRole::Calibration),
        validation: pick(SplitRole::Validation),
        test: pick(SplitRole::Test),
    };
    split.check()?;
    Ok(split)
}

// ─── fitting and evaluation ─────────────────────────────────────────────────

/// Everything fitted on one fold.
#[derive(Debug, Clone)]
pub struct FittedFusion {
    pub mode: FusionMode,
    pub calibration: CalibrationState,
    pub gates: Option<GateParameters>,
    pub trace: Option<TrainingTrace>,
}

pub(crate) fn select<'a>(records: &'a [LogitRecord], idx: &[usize]) -> Vec<&'a LogitRecord> {
    idx.iter().map(|&i| &records[i]).collect()
}

pub fn fit_calibration(records: &[LogitRecord], split: &FoldSplit, task: TaskKind) -> Result<CalibrationState> {
    split.check()?;
    fit_temperatures(&select(records, &split.calibration), task)
}

/// Trains `mode` on the split's train records with early stopping on its
/// validation records. Non-learned modes skip training.
pub fn fit_mode(
    records: &[LogitRecord],
    split: &FoldSplit,
    task: TaskKind,
    calibration: &CalibrationState,
    mode: FusionMode,
    cfg: &TrainConfig,
) -> Result<FittedFusion> {
    split.check()?;
    let (gates, trace) = if mode.is_learnable() {
        let (g, t) = train_gate_split(
            &select(records, &split.train),
            &select(records, &split.validation),
            calibration,
            task,
            mode,
            cfg,
        )?;
        (Some(g), Some(t))
    } else {
        (None, None)
    };
    Ok(FittedFusion {
        mode,
        calibration: calibration.clone(),
        gates,
        trace,
    })
}

pub fn predict(records: &[&LogitRecord], fitted: &FittedFusion, task: TaskKind) -> Result<Vec<Vec<FusedPrediction>>> {
    records
        .iter()
        .map(|r| fuse_units(r, &fitted.calibration, task, fitted.mode, fitted.gates.as_ref()))
        .collect()
}

/// Predictions of a single calibrated expert (one-hot product weights).
pub fn expert_predictions(
    records: &[&LogitRecord],
    calibration: &CalibrationState,
    task: TaskKind,
    expert: usize,
) -> Result<Vec<Vec<FusedPrediction>>> {
    let w = SimplexWeights::one_hot(calibration.n_experts(), expert);
    records
        .iter()
        .map(|r| {
            calibrated_units(r, calibration, task)?
                .iter()
                .map(|pool| product_fuse(pool, &w))
                .collect()
        })
        .collect()
}

/// Mean task loss of fused predictions: cross-entropy for classification,
/// survival NLL for survival.
pub fn mean_task_loss(records: &[&LogitRecord], predictions: &[Vec<FusedPrediction>]) -> Result<f64> {
    let mut total = 0.0;
    for (r, units) in records.iter().zip(predictions) {
        total += match r.label {
            Label::Class(c) => -units[0].distribution.values()[c - 1].max(PROB_FLOOR).ln(),
            Label::Survival { bin, event } => {
                let h = hazards_of(units);
                crate::survival::survival_nll(&h, bin, event)?
            }
        };
    }
    Ok(total / records.len().max(1) as f64)
}

fn hazards_of(units: &[FusedPrediction]) -> HazardCurve {
    HazardCurve::new(units.iter().map(|u| u.distribution.values()[EVENT]).collect())
        .expect("fused hazards are probabilities")
}

/// Test-set metrics. Entries that are undefined on the given records (for
/// example an AUC with a single class present) are `None`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub n: usize,
    pub loss: f64,
    pub auc: Option<f64>,
    pub acc: Option<f64>,
    pub f1: Option<f64>,
    pub perf: Option<f64>,
    pub c_index: Option<f64>,
}

pub fn evaluate(records: &[&LogitRecord], predictions: &[Vec<FusedPrediction>], task: TaskKind) -> Result<EvalMetrics> {
    if records.len() != predictions.len() || records.is_empty() {
        return Err(Error::Shape("evaluation needs one prediction per record".into()));
    }
    let mut m = EvalMetrics {
        n: records.len(),
        loss: mean_task_loss(records, predictions)?,
        ..Default::default()
    };
    if task.is_survival() {
        let risks: Vec<f64> = predictions.iter().map(|u| risk_score(&hazards_of(u))).collect();
        let (times, events): (Vec<f64>, Vec<bool>) = records
            .iter()
            .map(|r| {
                let (bin, event) = r.label.bin_index().expect("survival label");
                (bin as f64, event)
            })
            .unzip();
        m.c_index = c_index(&risks, &times, &events).ok();
    } else {
        let probs: Vec<Vec<f64>> = predictions
            .iter()
            .map(|u| u[0].distribution.values().to_vec())
            .collect();
        let labels: Vec<usize> = records
            .iter()
            .map(|r| r.label.class_index().expect("class label"))
            .collect();
        let preds: Vec<usize> = probs.iter().map(|p| crate::data::argmax(p)).collect();
        m.acc = crate::metrics::accuracy(&preds, &labels).ok();
        m.f1 = crate::metrics::f1(&preds, &labels).ok();
        m.auc = crate::metrics::auc_macro(&probs, &labels).ok();
        if let (Some(a), Some(c), Some(f)) = (m.auc, m.acc, m.f1) {
            m.perf = Some(PerfSummary::new(a, c, f).perf);
        }
    }
    Ok(m)
}

// ─── configuration ──────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitScheme {
    /// Rotate over the records' fold tags.
    #[default]
    Cv,
    /// Use the records' role tags as a single split.
    Roles,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    #[serde(default)]
    pub path: Option<PathBuf>,
    #[serde(default)]
    pub simulate: Option<PoolSpec>,
    #[serde(default)]
    pub split: SplitScheme,
    /// Expected task kind; checked against the data when given.
    #[serde(default)]
    pub task: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CalibrationConfig {
    pub fraction: f64,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        CalibrationConfig { fraction: 0.1 }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricsConfig {
    /// Also report every calibrated single expert.
    pub single_experts: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub data: DataConfig,
    #[serde(default)]
    pub calibration: CalibrationConfig,
    #[serde(default)]
    pub gate: TrainConfig,
    #[serde(default = "default_mode")]
    pub fusion_mode: FusionMode,
    #[serde(default)]
    pub metrics: MetricsConfig,
    #[serde(default)]
    pub seed: u64,
}

fn default_mode() -> FusionMode {
    FusionMode::LogitProd
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg: PipelineConfig = serde_json::from_str(&fs::read_to_string(path)?)?;
        // relative data paths resolve against the config's directory
        if let (Some(p), Some(dir)) = (cfg.data.path.as_mut(), path.parent()) {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn load_dataset(&self) -> Result<Dataset> {
        let ds = match (&self.data.path, &self.data.simulate) {
            (Some(p), None) => Dataset::load(p)?,
            (None, Some(spec)) => generate_pool(spec)?.0,
            _ => {
                return Err(Error::Invalid(
                    "data section needs exactly one of `path` or `simulate`".into(),
                ))
            }
        };
        if let Some(task) = &self.data.task {
            if task != ds.meta.task.name() {
                return Err(Error::Invalid(format!(
                    "config expects a {task} task, data is {}",
                    ds.meta.task.name()
                )));
            }
        }
        Ok(ds)
    }
}

// ─── runs ───────────────────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub fold: usize,
    pub n_train: usize,
    pub n_calibration: usize,
    pub n_validation: usize,
    pub n_test: usize,
    pub temperatures: Vec<f64>,
    pub best_epoch: Option<usize>,
    pub metrics: EvalMetrics,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub single_experts: BTreeMap<String, EvalMetrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl MeanStd {
    /// Mean and sample standard deviation of the defined values.
    pub fn of(values: impl IntoIterator<Item = Option<f64>>) -> Option<Self> {
        let v: Vec<f64> = values.into_iter().flatten().collect();
        if v.is_empty() {
            return None;
        }
        let n = v.len();
        let mean = v.iter().sum::<f64>() / n as f64;
        let var = if n > 1 {
            v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64
        } else {
            0.0
        };
        Some(MeanStd { mean, std: var.sqrt(), n })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub task: String,
    pub mode: FusionMode,
    pub n_folds: usize,
    pub folds: Vec<FoldReport>,
    pub aggregate: BTreeMap<String, MeanStd>,
}

/// Mean ± std of every defined metric across `folds`.
pub fn aggregate(folds: &[&EvalMetrics]) -> BTreeMap<String, MeanStd> {
    type Getter = fn(&EvalMetrics) -> Option<f64>;
    let fields: [(&str, Getter); 6] = [
        ("loss", |m| Some(m.loss)),
        ("auc", |m| m.auc),
        ("acc", |m| m.acc),
        ("f1", |m| m.f1),
        ("perf", |m| m.perf),
        ("c_index", |m| m.c_index),
    ];
    fields
        .iter()
        .filter_map(|(name, get)| {
            MeanStd::of(folds.iter().map(|m| get(m))).map(|s| (name.to_string(), s))
        })
        .collect()
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut f = fs::File::create(path)?;
    serde_json::to_writer_pretty(&mut f, value)?;
    writeln!(f)?;
    Ok(())
}

/// Artifacts of one fold, written under `out/fold_<f>/`.
pub struct FoldArtifacts<'a> {
    pub fitted: &'a FittedFusion,
    pub ids: Vec<&'a str>,
    pub predictions: &'a [Vec<FusedPrediction>],
    pub report: &'a FoldReport,
}

pub fn write_fold(dir: &Path, task: TaskKind, a: &FoldArtifacts<'_>) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_json(&dir.join("calibration.json"), &a.fitted.calibration)?;
    if let Some(g) = &a.fitted.gates {
        write_json(&dir.join("gate.json"), g)?;
    }
    if let Some(t) = &a.fitted.trace {
        t.write_csv(fs::File::create(dir.join("trace.csv"))?)?;
    }
    let mut preds = std::io::BufWriter::new(fs::File::create(dir.join("predictions.jsonl"))?);
    for (id, units) in a.ids.iter().zip(a.predictions) {
        serde_json::to_writer(&mut preds, &PredictionLine::new(id, a.fitted.mode, task, units))?;
        writeln!(preds)?;
    }
    preds.flush()?;
    write_json(&dir.join("metrics.json"), a.report)
}

/// Runs one fold end to end and returns its report and fitted state.
pub fn run_fold(
    ds: &Dataset,
    split: &FoldSplit,
    mode: FusionMode,
    cfg: &TrainConfig,
    single_experts: bool,
) -> Result<(FoldReport, FittedFusion, Vec<Vec<FusedPrediction>>)> {
    let task = ds.meta.task;
    let calibration = fit_calibration(&ds.records, split, task)?;
    let fitted = fit_mode(&ds.records, split, task, &calibration, mode, cfg)?;
    let test = select(&ds.records, &split.test);
    let predictions = predict(&test, &fitted, task)?;
    let metrics = evaluate(&test, &predictions, task)?;
    let mut singles = BTreeMap::new();
    if single_experts {
        for (m, name) in ds.meta.expert_names.iter().enumerate() {
            let p = expert_predictions(&test, &calibration, task, m)?;
            singles.insert(name.clone(), evaluate(&test, &p, task)?);
        }
    }
    let report = FoldReport {
        fold: split.fold,
        n_train: split.train.len(),
        n_calibration: split.calibration.len(),
        n_validation: split.validation.len(),
        n_test: split.test.len(),
        temperatures: calibration.temperatures.clone(),
        best_epoch: fitted.trace.as_ref().map(|t| t.best_epoch),
        metrics,
        single_experts: singles,
    };
    Ok((report, fitted, predictions))
}

/// Full pipeline: validate, split, and for each fold calibrate, train,
/// predict and evaluate. Writes per-fold artifacts and `summary.json` when
/// `out` is given.
pub fn run_pipeline(cfg: &PipelineConfig, out: Option<&Path>) -> Result<Summary> {
    let ds = cfg.load_dataset()?;
    let report = validate_dataset(&ds.records, &ds.meta)?;
    if !report.passed() {
        return Err(Error::Invalid(format!(
            "dataset has {} violations, first: {:?}",
            report.violations.len(),
            report.violations[0]
        )));
    }
    let splits = match cfg.data.split {
        SplitScheme::Cv => cv_splits(&ds.records, cfg.calibration.fraction, cfg.seed)?,
        SplitScheme::Roles => vec![role_split(&ds.records)?],
    };
    let task = ds.meta.task;
    let mut folds = Vec::with_capacity(splits.len());
    for split in &splits {
        let mut train_cfg = cfg.gate.clone();
        train_cfg.seed = cfg.seed.wrapping_add(split.fold as u64);
        let (report, fitted, predictions) =
            run_fold(&ds, split, cfg.fusion_mode, &train_cfg, cfg.metrics.single_experts)?;
        if let Some(out) = out {
            let ids = split.test.iter().map(|&i| ds.records[i].sample_id.as_str()).collect();
            let artifacts = FoldArtifacts {
                fitted: &fitted,
                ids,
                predictions: &predictions,
                report: &report,
            };
            write_fold(&out.join(format!("fold_{}", split.fold)), task, &artifacts)?;
        }
        folds.push(report);
    }
    let summary = Summary {
        task: task.name().to_string(),
        mode: cfg.fusion_mode,
        n_folds: folds.len(),
        aggregate: aggregate(&folds.iter().map(|f| &f.metrics).collect::<Vec<_>>()),
        folds,
    };
    if let Some(out) = out {
        fs::create_dir_all(out)?;
        write_json(&out.join("summary.json"), &summary)?;
    }
    Ok(summary)
}
