//! Multi-seed comparison of fusion modes and single experts.
//!
//! For every seed a fresh pool is simulated and run through the
//! cross-validation splits. Test predictions from all folds are pooled
//! before scoring, so each seed yields one number per method.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::{FusedPrediction, FusionMode};
use crate::gate::TrainConfig;
use crate::pipeline::{
    aggregate, cv_splits, evaluate, expert_predictions, fit_calibration, fit_mode, mean_task_loss, predict, select,
    EvalMetrics, MeanStd,
};
use crate::simulator::{generate_pool, PoolSpec};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationConfig {
    pub modes: Vec<FusionMode>,
    pub seeds: Vec<u64>,
    #[serde(default = "default_true")]
    pub single_experts: bool,
    #[serde(default = "default_calib_fraction")]
    pub calib_fraction: f64,
    #[serde(default)]
    pub gate: TrainConfig,
}

fn default_true() -> bool {
    true
}

fn default_calib_fraction() -> f64 {
    0.1
}

impl AblationConfig {
    pub fn new(modes: Vec<FusionMode>, seeds: Vec<u64>) -> Self {
        Self {
            modes,
            seeds,
            single_experts: true,
            calib_fraction: default_calib_fraction(),
            gate: TrainConfig::default(),
        }
    }
}

/// Pooled test metrics of one seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub methods: BTreeMap<String, EvalMetrics>,
    /// Per-fold training loss of the fitted fusion, keyed like `methods`.
    pub train_loss: BTreeMap<String, Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub seeds: Vec<SeedResult>,
    /// Mean ± std across seeds, per method and metric.
    pub summary: BTreeMap<String, BTreeMap<String, MeanStd>>,
}

impl AblationReport {
    pub fn metric(&self, method: &str, seed_index: usize, get: fn(&EvalMetrics) -> Option<f64>) -> Option<f64> {
        self.seeds.get(seed_index)?.methods.get(method).and_then(get)
    }
}

/// Runs every configured mode (and optionally every single expert) on the
/// pool simulated from `spec` with `spec.seed` replaced by `seed`.
pub fn run_seed(spec: &PoolSpec, seed: u64, cfg: &AblationConfig) -> Result<SeedResult> {
    let mut spec = spec.clone();
    spec.seed = seed;
    let (ds, _) = generate_pool(&spec)?;
    let task = ds.meta.task;
    let splits = cv_splits(&ds.records, cfg.calib_fraction, seed)?;

    let n = ds.records.len();
    let mut pooled: BTreeMap<String, Vec<Option<Vec<FusedPrediction>>>> = BTreeMap::new();
    let mut train_loss: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut put = |name: &str, idx: &[usize], preds: Vec<Vec<FusedPrediction>>| {
        let slot = pooled.entry(name.to_string()).or_insert_with(|| vec![None; n]);
        for (&i, p) in idx.iter().zip(preds) {
            slot[i] = Some(p);
        }
    };

    for split in &splits {
        let calibration = fit_calibration(&ds.records, split, task)?;
        let train = select(&ds.records, &split.train);
        let test = select(&ds.records, &split.test);
        let mut train_cfg = cfg.gate.clone();
        train_cfg.seed = seed.wrapping_add(split.fold as u64);
        for &mode in &cfg.modes {
            let fitted = fit_mode(&ds.records, split, task, &calibration, mode, &train_cfg)?;
            let loss = mean_task_loss(&train, &predict(&train, &fitted, task)?)?;
            train_loss.entry(mode.name().to_string()).or_default().push(loss);
            put(mode.name(), &split.test, predict(&test, &fitted, task)?);
        }
        if cfg.single_experts {
            for (m, name) in ds.meta.expert_names.iter().enumerate() {
                let loss = mean_task_loss(&train, &expert_predictions(&train, &calibration, task, m)?)?;
                train_loss.entry(name.clone()).or_default().push(loss);
                put(name, &split.test, expert_predictions(&test, &calibration, task, m)?);
            }
        }
    }

    let all: Vec<_> = ds.records.iter().collect();
    let mut methods = BTreeMap::new();
    for (name, slot) in pooled {
        let preds: Vec<Vec<FusedPrediction>> = slot
            .into_iter()
            .collect::<Option<_>>()
            .ok_or_else(|| Error::Invalid(format!("{name}: some records were never tested")))?;
        methods.insert(name, evaluate(&all, &preds, task)?);
    }
    Ok(SeedResult {
        seed,
        methods,
        train_loss,
    })
}

pub fn ablation_suite(spec: &PoolSpec, cfg: &AblationConfig) -> Result<AblationReport> {
    if cfg.seeds.is_empty() {
        return Err(Error::Invalid("ablation needs at least one seed".into()));
    }
    let seeds = cfg
        .seeds
        .iter()
        .map(|&s| run_seed(spec, s, cfg))
        .collect::<Result<Vec<_>>>()?;
    let mut summary = BTreeMap::new();
    for name in seeds[0].methods.keys() {
        let per_seed: Vec<&EvalMetrics> = seeds.iter().filter_map(|s| s.methods.get(name)).collect();
        summary.insert(name.clone(), aggregate(&per_seed));
    }
    Ok(AblationReport { seeds, summary })
}
