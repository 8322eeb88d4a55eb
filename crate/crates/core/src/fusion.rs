//! Weighted product-of-experts fusion and the baseline combiners.
//!
//! `q(y) ∝ Π_m p_m(y)^{w_m}` is evaluated in log space: the weighted sum of
//! clamped log-probabilities is normalized with log-sum-exp, and the
//! normalizer `Z = Σ_y Π_m p_m(y)^{w_m}` is reported alongside.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::calibration::CalibrationState;
use crate::cues::{calibrated_unit_logits, calibrated_units, GatingInput};
use crate::data::{log_sum_exp, LogitRecord, ProbabilityVector, TaskKind};
use crate::error::{Error, Result};
use crate::gate::{Combiner, GateInputKind, GateParameters, SimplexWeights};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusedPrediction {
    pub distribution: ProbabilityVector,
    pub weights: SimplexWeights,
    /// `Z`; at most 1 for product fusion, exactly 1 for the other modes.
    pub normalizer: f64,
    pub log_normalizer: f64,
}

impl FusedPrediction {
    pub fn predicted_class(&self) -> usize {
        self.distribution.argmax()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionMode {
    MajorityVote,
    Mean,
    UniformProduct,
    LearnableSum,
    LearnableProduct,
    #[serde(rename = "logitprod")]
    LogitProd,
}

impl FusionMode {
    pub const ALL: [FusionMode; 6] = [
        FusionMode::MajorityVote,
        FusionMode::Mean,
        FusionMode::UniformProduct,
        FusionMode::LearnableSum,
        FusionMode::LearnableProduct,
        FusionMode::LogitProd,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            FusionMode::MajorityVote => "majority_vote",
            FusionMode::Mean => "mean",
            FusionMode::UniformProduct => "uniform_product",
            FusionMode::LearnableSum => "learnable_sum",
            FusionMode::LearnableProduct => "learnable_product",
            FusionMode::LogitProd => "logitprod",
        }
    }

    pub fn is_learnable(&self) -> bool {
        self.gate_input().is_some()
    }

    /// Input of the gate, `None` for the non-learned modes.
    pub fn gate_input(&self) -> Option<GateInputKind> {
        match self {
            FusionMode::LearnableSum | FusionMode::LogitProd => Some(GateInputKind::Cues),
            FusionMode::LearnableProduct => Some(GateInputKind::Logits),
            _ => None,
        }
    }

    pub fn combiner(&self) -> Option<Combiner> {
        match self {
            FusionMode::LearnableSum => Some(Combiner::Sum),
            FusionMode::LearnableProduct | FusionMode::LogitProd => Some(Combiner::Product),
            _ => None,
        }
    }
}

impl fmt::Display for FusionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FusionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FusionMode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Invalid(format!("unknown fusion mode {s:?}")))
    }
}

fn check_pool(pool: &[ProbabilityVector]) -> Result<usize> {
    let k = pool
        .first()
        .ok_or_else(|| Error::Invalid("empty expert pool".into()))?
        .len();
    if pool.iter().any(|p| p.len() != k) {
        return Err(Error::Shape("pool distributions differ in length".into()));
    }
    Ok(k)
}

/// Weighted product of clamped log-distributions. Returns the fused
/// distribution and `ln Z`.
pub(crate) fn product_of_logs(log_probs: &[Vec<f64>], w: &[f64]) -> (Vec<f64>, f64) {
    let k = log_probs[0].len();
    let mixed: Vec<f64> = (0..k)
        .map(|y| w.iter().zip(log_probs).map(|(w, lp)| w * lp[y]).sum())
        .collect();
    let lse = log_sum_exp(&mixed);
    (mixed.iter().map(|l| (l - lse).exp()).collect(), lse)
}

/// `q(y) = Π_m p_m(y)^{w_m} / Z`.
pub fn product_fuse(pool: &[ProbabilityVector], w: &SimplexWeights) -> Result<FusedPrediction> {
    check_pool(pool)?;
    if w.len() != pool.len() {
        return Err(Error::Shape(format!(
            "{} weights for {} experts",
            w.len(),
            pool.len()
        )));
    }
    let logs: Vec<Vec<f64>> = pool.iter().map(ProbabilityVector::clamped_log).collect();
    let (dist, log_z) = product_of_logs(&logs, w.values());
    Ok(FusedPrediction {
        distribution: ProbabilityVector::from_normalized(dist),
        weights: w.clone(),
        normalizer: log_z.exp(),
        log_normalizer: log_z,
    })
}

/// Arithmetic mixture `Σ_m w_m p_m`, uniform when `w` is absent.
pub fn mean_fuse(pool: &[ProbabilityVector], w: Option<&SimplexWeights>) -> Result<ProbabilityVector> {
    let k = check_pool(pool)?;
    let uniform;
    let w = match w {
        Some(w) if w.len() != pool.len() => {
            return Err(Error::Shape(format!("{} weights for {} experts", w.len(), pool.len())))
        }
        Some(w) => w,
        None => {
            uniform = SimplexWeights::uniform(pool.len());
            &uniform
        }
    };
    let mut q = vec![0.0; k];
    for (p, wm) in pool.iter().zip(w.values()) {
        for (acc, v) in q.iter_mut().zip(p.values()) {
            *acc += wm * v;
        }
    }
    let sum: f64 = q.iter().sum();
    Ok(ProbabilityVector::from_normalized(q.into_iter().map(|v| v / sum).collect()))
}

fn vote_counts(pool: &[ProbabilityVector], k: usize) -> Vec<f64> {
    let mut votes = vec![0.0; k];
    for p in pool {
        votes[p.argmax()] += 1.0;
    }
    votes
}

/// Plurality over per-expert argmax classes (0-based). Ties go to the class
/// with the highest mean probability among the tied ones.
pub fn majority_vote(pool: &[ProbabilityVector]) -> Result<usize> {
    let k = check_pool(pool)?;
    let votes = vote_counts(pool, k);
    let top = votes.iter().copied().fold(0.0, f64::max);
    let mean = mean_fuse(pool, None)?;
    let mut best: Option<usize> = None;
    for (c, v) in votes.iter().enumerate() {
        if *v == top && best.is_none_or(|b| mean.values()[c] > mean.values()[b]) {
            best = Some(c);
        }
    }
    Ok(best.expect("at least one class carries the top vote"))
}

/// Majority vote as a distribution: vote counts smoothed by the mean
/// distribution, `(votes + p̄) / (M + 1)`. Its argmax is [`majority_vote`].
fn vote_distribution(pool: &[ProbabilityVector]) -> Result<ProbabilityVector> {
    let k = check_pool(pool)?;
    let votes = vote_counts(pool, k);
    let mean = mean_fuse(pool, None)?;
    let denom = pool.len() as f64 + 1.0;
    let q: Vec<f64> = votes
        .iter()
        .zip(mean.values())
        .map(|(v, p)| (v + p) / denom)
        .collect();
    let sum: f64 = q.iter().sum();
    Ok(ProbabilityVector::from_normalized(q.into_iter().map(|v| v / sum).collect()))
}

fn unit_prediction(pool: &[ProbabilityVector], mode: FusionMode, w: Option<SimplexWeights>) -> Result<FusedPrediction> {
    let m = pool.len();
    let flat = |distribution| FusedPrediction {
        distribution,
        weights: SimplexWeights::uniform(m),
        normalizer: 1.0,
        log_normalizer: 0.0,
    };
    match mode {
        FusionMode::MajorityVote => Ok(flat(vote_distribution(pool)?)),
        FusionMode::Mean => Ok(flat(mean_fuse(pool, None)?)),
        FusionMode::UniformProduct => product_fuse(pool, &SimplexWeights::uniform(m)),
        FusionMode::LearnableSum => {
            let w = w.expect("gated mode carries weights");
            Ok(FusedPrediction {
                distribution: mean_fuse(pool, Some(&w))?,
                weights: w,
                normalizer: 1.0,
                log_normalizer: 0.0,
            })
        }
        FusionMode::LearnableProduct | FusionMode::LogitProd => {
            product_fuse(pool, &w.expect("gated mode carries weights"))
        }
    }
}

/// Fuses every unit of a record (one for classification, one per bin for
/// survival) under `mode`.
pub fn fuse_units(
    record: &LogitRecord,
    calib: &CalibrationState,
    task: TaskKind,
    mode: FusionMode,
    gates: Option<&GateParameters>,
) -> Result<Vec<FusedPrediction>> {
    let pools = calibrated_units(record, calib, task)?;
    let Some(kind) = mode.gate_input() else {
        return pools.iter().map(|p| unit_prediction(p, mode, None)).collect();
    };
    let gates = gates.ok_or_else(|| {
        Error::Invalid(format!("fusion mode {mode} requires gate parameters"))
    })?;
    if gates.mode != mode {
        return Err(Error::Invalid(format!(
            "gate parameters were trained for {}, not {mode}",
            gates.mode
        )));
    }
    if gates.gates.len() != pools.len() {
        return Err(Error::Shape(format!(
            "{} gates for {} fusion units",
            gates.gates.len(),
            pools.len()
        )));
    }
    let inputs: Vec<Vec<f64>> = match kind {
        GateInputKind::Cues => pools
            .iter()
            .map(|p| GatingInput::from_pool(p).map(|g| g.x))
            .collect::<Result<_>>()?,
        GateInputKind::Logits => calibrated_unit_logits(record, calib, task)?,
    };
    pools
        .iter()
        .zip(inputs)
        .enumerate()
        .map(|(unit, (pool, x))| {
            let w = gates.weights(unit, &x)?;
            unit_prediction(pool, mode, Some(w))
        })
        .collect()
}

/// Fuses a classification record.
pub fn fuse_record(
    record: &LogitRecord,
    calib: &CalibrationState,
    mode: FusionMode,
    gates: Option<&GateParameters>,
) -> Result<FusedPrediction> {
    let k = record.logits.first().map_or(0, Vec::len);
    let mut units = fuse_units(record, calib, TaskKind::Classification { k }, mode, gates)?;
    Ok(units.remove(0))
}

/// One line of the prediction dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionLine {
    pub id: String,
    pub mode: FusionMode,
    /// One weight vector per fusion unit.
    pub weights: Vec<Vec<f64>>,
    /// Fused class distribution, or the per-bin fused hazards for survival.
    pub dist: Vec<f64>,
    /// Per-unit `ln Z`.
    pub log_normalizer: Vec<f64>,
}

impl PredictionLine {
    pub fn new(id: &str, mode: FusionMode, task: TaskKind, units: &[FusedPrediction]) -> Self {
        let dist = if task.is_survival() {
            units
                .iter()
                .map(|u| u.distribution.values()[crate::survival::EVENT])
                .collect()
        } else {
            units[0].distribution.values().to_vec()
        };
        PredictionLine {
            id: id.to_string(),
            mode,
            weights: units.iter().map(|u| u.weights.values().to_vec()).collect(),
            dist,
            log_normalizer: units.iter().map(|u| u.log_normalizer).collect(),
        }
    }
}
