//! Per-expert scalar temperature scaling.
//!
//! Each expert's logits are divided by a temperature fitted on the
//! calibration split by minimizing that expert's own negative
//! log-likelihood. The search is a golden-section search over
//! `log τ ∈ [ln 0.05, ln 20]`.

use serde::{Deserialize, Serialize};

use crate::data::{softmax_finite, Label, LogitRecord, TaskKind};
use crate::error::{Error, Result};
use crate::survival::{logits_to_hazards, survival_nll};

pub const TAU_MIN: f64 = 0.05;
pub const TAU_MAX: f64 = 20.0;
/// Absolute tolerance of the golden-section search, in log-temperature.
pub const LOG_TAU_TOL: f64 = 1e-4;
pub const MAX_SEARCH_ITERS: usize = 200;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationState {
    pub temperatures: Vec<f64>,
    pub nll_before: Vec<f64>,
    pub nll_after: Vec<f64>,
    #[serde(rename = "n")]
    pub n_calibration_samples: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl CalibrationState {
    /// All temperatures at 1.
    pub fn identity(m: usize) -> Self {
        CalibrationState {
            temperatures: vec![1.0; m],
            nll_before: vec![0.0; m],
            nll_after: vec![0.0; m],
            n_calibration_samples: 0,
            warnings: Vec::new(),
        }
    }

    pub fn n_experts(&self) -> usize {
        self.temperatures.len()
    }
}

/// Mean NLL of expert `m` at temperature `tau` over the given records.
pub fn expert_nll(records: &[&LogitRecord], m: usize, tau: f64, task: TaskKind) -> Result<f64> {
    let mut total = 0.0;
    let mut scaled = Vec::new();
    for r in records {
        let row = r.logits.get(m).ok_or_else(|| {
            Error::Shape(format!("record {} has no expert row {m}", r.sample_id))
        })?;
        scaled.clear();
        scaled.extend(row.iter().map(|z| z / tau));
        total += match r.label {
            Label::Class(c) if !task.is_survival() => {
                let p = softmax_finite(&scaled);
                let idx = c
                    .checked_sub(1)
                    .filter(|i| *i < p.len())
                    .ok_or_else(|| Error::Invalid(format!("class {c} out of range")))?;
                -p.clamped_log()[idx]
            }
            Label::Survival { bin, event } if task.is_survival() => {
                survival_nll(&logits_to_hazards(&scaled)?, bin, event)?
            }
            _ => {
                return Err(Error::Invalid(format!(
                    "label of {} does not match a {} task",
                    r.sample_id,
                    task.name()
                )))
            }
        };
    }
    Ok(total / records.len() as f64)
}

/// Golden-section minimization of `f` over `[lo, hi]`. Returns the final
/// bracket midpoint.
fn golden_section<F>(mut f: F, mut lo: f64, mut hi: f64) -> Result<f64>
where
    F: FnMut(f64) -> Result<f64>,
{
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = hi - inv_phi * (hi - lo);
    let mut d = lo + inv_phi * (hi - lo);
    let mut fc = f(c)?;
    let mut fd = f(d)?;
    for _ in 0..MAX_SEARCH_ITERS {
        if hi - lo <= LOG_TAU_TOL {
            break;
        }
        if fc <= fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - inv_phi * (hi - lo);
            fc = f(c)?;
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + inv_phi * (hi - lo);
            fd = f(d)?;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Fits one temperature per expert on calibration records.
///
/// A classification split with a single observed class forces all
/// temperatures to 1 and records a warning, since the likelihood then keeps
/// improving as τ shrinks toward the search boundary.
pub fn fit_temperatures(records: &[&LogitRecord], task: TaskKind) -> Result<CalibrationState> {
    let first = records
        .first()
        .ok_or_else(|| Error::Invalid("empty calibration split".into()))?;
    let m = first.n_experts();
    if m == 0 {
        return Err(Error::Shape("records carry no expert rows".into()));
    }
    if let Some(r) = records.iter().find(|r| r.n_experts() != m) {
        return Err(Error::Shape(format!(
            "record {} has {} experts, expected {m}",
            r.sample_id,
            r.n_experts()
        )));
    }

    let mut warnings = Vec::new();
    let degenerate = if task.is_survival() {
        false
    } else {
        let first_label = first.label;
        records.iter().all(|r| r.label == first_label)
    };
    if degenerate {
        warnings.push(
            "calibration split contains a single class; temperatures fixed at 1".to_string(),
        );
    }

    let mut temperatures = Vec::with_capacity(m);
    let mut nll_before = Vec::with_capacity(m);
    let mut nll_after = Vec::with_capacity(m);
    for expert in 0..m {
        let before = expert_nll(records, expert, 1.0, task)?;
        let (tau, after) = if degenerate {
            (1.0, before)
        } else {
            let log_tau = golden_section(
                |lt| expert_nll(records, expert, lt.exp(), task),
                TAU_MIN.ln(),
                TAU_MAX.ln(),
            )?;
            let tau = log_tau.exp().clamp(TAU_MIN, TAU_MAX);
            let after = expert_nll(records, expert, tau, task)?;
            // A non-unimodal objective can leave the search above τ = 1.
            if after <= before {
                (tau, after)
            } else {
                (1.0, before)
            }
        };
        temperatures.push(tau);
        nll_before.push(before);
        nll_after.push(after);
    }
    Ok(CalibrationState {
        temperatures,
        nll_before,
        nll_after,
        n_calibration_samples: records.len(),
        warnings,
    })
}

/// Divides row m of the record's logits by τ_m.
pub fn apply_temperatures(record: &LogitRecord, state: &CalibrationState) -> Result<Vec<Vec<f64>>> {
    if record.n_experts() != state.n_experts() {
        return Err(Error::Shape(format!(
            "record {} has {} experts, calibration has {}",
            record.sample_id,
            record.n_experts(),
            state.n_experts()
        )));
    }
    Ok(record
        .logits
        .iter()
        .zip(&state.temperatures)
        .map(|(row, tau)| row.iter().map(|z| z / tau).collect())
        .collect())
}
