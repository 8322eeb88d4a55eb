//! Discrete-time survival: per-bin logistic hazards, the survival negative
//! log-likelihood, bin-wise product fusion and the risk statistic used for
//! the C-index.
//!
//! Each bin is treated as a Bernoulli outcome `(event, no event)`, encoded as
//! the two-entry distribution `(h_k, 1 - h_k)`. Index 0 is the event.

use serde::{Deserialize, Serialize};

use crate::calibration::CalibrationState;
use crate::data::{Label, LogitRecord, ProbabilityVector, TaskKind, PROB_FLOOR};
use crate::error::{Error, Result};
use crate::fusion::{self, FusedPrediction, FusionMode};
use crate::gate::GateParameters;

/// Index of the event outcome in a per-bin Bernoulli distribution.
pub const EVENT: usize = 0;
/// Index of the no-event outcome.
pub const NO_EVENT: usize = 1;

/// Per-bin conditional event probabilities, clamped to
/// `[PROB_FLOOR, 1 - PROB_FLOOR]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct HazardCurve {
    hazards: Vec<f64>,
}

impl HazardCurve {
    pub fn new(hazards: Vec<f64>) -> Result<Self> {
        if hazards.is_empty() {
            return Err(Error::Invalid("empty hazard curve".into()));
        }
        if hazards.iter().any(|h| !h.is_finite() || !(0.0..=1.0).contains(h)) {
            return Err(Error::Invalid(format!("hazards outside [0, 1]: {hazards:?}")));
        }
        Ok(Self::clamped(hazards))
    }

    fn clamped(hazards: Vec<f64>) -> Self {
        HazardCurve {
            hazards: hazards
                .into_iter()
                .map(|h| h.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR))
                .collect(),
        }
    }

    pub fn hazards(&self) -> &[f64] {
        &self.hazards
    }

    pub fn len(&self) -> usize {
        self.hazards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hazards.is_empty()
    }

    /// Bin `k` as a Bernoulli distribution `(h_k, 1 - h_k)`.
    pub fn bin_distribution(&self, k: usize) -> ProbabilityVector {
        bernoulli(self.hazards[k])
    }
}

pub(crate) fn bernoulli(h: f64) -> ProbabilityVector {
    let h = h.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR);
    ProbabilityVector::from_normalized(vec![h, 1.0 - h])
}

pub fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Logistic link applied bin by bin.
pub fn logits_to_hazards(expert_logits: &[f64]) -> Result<HazardCurve> {
    if let Some(bad) = expert_logits.iter().find(|z| !z.is_finite()) {
        return Err(Error::NonFinite(format!("hazard logit {bad}")));
    }
    if expert_logits.is_empty() {
        return Err(Error::Invalid("empty hazard logits".into()));
    }
    Ok(HazardCurve::clamped(
        expert_logits.iter().map(|&z| logistic(z)).collect(),
    ))
}

/// Per-bin training target: `Some(EVENT)` / `Some(NO_EVENT)` for bins in the
/// likelihood, `None` for bins after the observed time. `bin` is 1-based.
pub fn bin_targets(k: usize, bin: usize, event: bool) -> Vec<Option<usize>> {
    (1..=k)
        .map(|j| {
            if j < bin {
                Some(NO_EVENT)
            } else if j == bin {
                Some(if event { EVENT } else { NO_EVENT })
            } else {
                None
            }
        })
        .collect()
}

/// Discrete-time survival NLL for an observed (1-based) bin and event flag.
pub fn survival_nll(h: &HazardCurve, bin: usize, event: bool) -> Result<f64> {
    let k = h.len();
    if !(1..=k).contains(&bin) {
        return Err(Error::Invalid(format!("event bin {bin} outside 1..={k}")));
    }
    let hz = h.hazards();
    let survived: f64 = hz[..bin - 1].iter().map(|h| -(1.0 - h).ln()).sum();
    let last = if event {
        -hz[bin - 1].ln()
    } else {
        -(1.0 - hz[bin - 1]).ln()
    };
    Ok(survived + last)
}

/// Survival NLL for a [`Label::Survival`].
pub fn survival_nll_label(h: &HazardCurve, label: &Label) -> Result<f64> {
    match *label {
        Label::Survival { bin, event } => survival_nll(h, bin, event),
        Label::Class(_) => Err(Error::Invalid("class label passed to survival NLL".into())),
    }
}

/// Cumulative log-survival risk `-Σ ln(1 - h_k)`.
pub fn risk_score(h: &HazardCurve) -> f64 {
    h.hazards().iter().map(|h| -(1.0 - h).ln()).sum()
}

/// Per-bin fusion result.
#[derive(Debug, Clone, PartialEq)]
pub struct SurvivalPrediction {
    pub hazards: HazardCurve,
    /// One fused Bernoulli per bin.
    pub bins: Vec<FusedPrediction>,
}

/// LogitProd fusion of a survival record: bin-wise cues, one gate per bin,
/// product fusion of the per-bin Bernoullis.
pub fn fuse_survival(
    record: &LogitRecord,
    calib: &CalibrationState,
    gates: &GateParameters,
) -> Result<HazardCurve> {
    let task = TaskKind::Survival {
        k: record.logits.first().map_or(0, Vec::len),
    };
    Ok(fuse_survival_mode(record, calib, task, FusionMode::LogitProd, Some(gates))?.hazards)
}

/// Bin-wise fusion under any [`FusionMode`].
pub fn fuse_survival_mode(
    record: &LogitRecord,
    calib: &CalibrationState,
    task: TaskKind,
    mode: FusionMode,
    gates: Option<&GateParameters>,
) -> Result<SurvivalPrediction> {
    if !task.is_survival() {
        return Err(Error::Invalid("fuse_survival on a classification task".into()));
    }
    if matches!(record.label, Label::Class(_)) {
        return Err(Error::Invalid(format!(
            "record {} carries a class label",
            record.sample_id
        )));
    }
    let bins = fusion::fuse_units(record, calib, task, mode, gates)?;
    let hazards = HazardCurve::clamped(
        bins.iter()
            .map(|b| b.distribution.values()[EVENT])
            .collect(),
    );
    Ok(SurvivalPrediction { hazards, bins })
}

/// Quantile discretization of raw follow-up times into `k` bins.
///
/// Cut points are the `j/k` quantiles of the event times (all times when
/// there are no events). Returns 1-based bins.
pub fn quantile_bins(times: &[f64], events: &[bool], k: usize) -> Result<Vec<Label>> {
    if times.len() != events.len() {
        return Err(Error::Shape(format!(
            "{} times vs {} event flags",
            times.len(),
            events.len()
        )));
    }
    if k == 0 || times.is_empty() {
        return Err(Error::Invalid("need at least one bin and one sample".into()));
    }
    if times.iter().any(|t| !t.is_finite()) {
        return Err(Error::NonFinite("follow-up time".into()));
    }
    let mut basis: Vec<f64> = times
        .iter()
        .zip(events)
        .filter(|(_, e)| **e)
        .map(|(t, _)| *t)
        .collect();
    if basis.is_empty() {
        basis = times.to_vec();
    }
    basis.sort_by(f64::total_cmp);
    let cuts: Vec<f64> = (1..k)
        .map(|j| {
            let pos = j as f64 / k as f64 * (basis.len() - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = pos.ceil() as usize;
            basis[lo] + (basis[hi] - basis[lo]) * (pos - lo as f64)
        })
        .collect();
    Ok(times
        .iter()
        .zip(events)
        .map(|(t, e)| Label::Survival {
            bin: 1 + cuts.iter().filter(|c| *t > **c).count(),
            event: *e,
        })
        .collect())
}
