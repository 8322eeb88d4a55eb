//! Logit-derived gating cues.
//!
//! For each expert: confidence `s` (max probability), top-2 margin `γ` and
//! entropy `h` (nats). For the pool: mean entropy `h̄` and the disagreement
//! `u = H(p̄) - h̄`, where `p̄` is the mean expert distribution. The gating
//! input is `concat(s, γ, h, h̄, u)`, of length `3M + 2`.
//!
//! Survival records are handled bin by bin: every bin is a two-outcome
//! distribution and gets its own gating input.

use std::io::Write;

use serde::Serialize;

use crate::calibration::{apply_temperatures, CalibrationState};
use crate::data::{softmax_finite, LogitRecord, ProbabilityVector, TaskKind};
use crate::error::{Error, Result};
use crate::survival::{bernoulli, logistic};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExpertCues {
    pub confidence: f64,
    pub margin: f64,
    pub entropy: f64,
}

/// Shannon entropy in nats, with `0 ln 0 = 0`.
pub fn entropy(p: &[f64]) -> f64 {
    -p.iter()
        .filter(|v| **v > 0.0)
        .map(|v| v * v.ln())
        .sum::<f64>()
}

pub fn expert_cues(p: &ProbabilityVector) -> Result<ExpertCues> {
    let v = p.values();
    if v.len() < 2 {
        return Err(Error::Invalid(format!(
            "cues need at least 2 outcomes, got {}",
            v.len()
        )));
    }
    let k1 = p.argmax();
    let mut k2 = if k1 == 0 { 1 } else { 0 };
    for (i, x) in v.iter().enumerate() {
        if i != k1 && *x > v[k2] {
            k2 = i;
        }
    }
    Ok(ExpertCues {
        confidence: v[k1],
        margin: v[k1] - v[k2],
        entropy: entropy(v),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Disagreement {
    pub mean_entropy: f64,
    pub mean_distribution: ProbabilityVector,
    pub score: f64,
}

pub fn disagreement(pool: &[ProbabilityVector]) -> Result<Disagreement> {
    let first = pool
        .first()
        .ok_or_else(|| Error::Invalid("empty expert pool".into()))?;
    let k = first.len();
    if let Some(p) = pool.iter().find(|p| p.len() != k) {
        return Err(Error::Shape(format!(
            "pool mixes distributions of length {k} and {}",
            p.len()
        )));
    }
    let m = pool.len() as f64;
    let mean_entropy = pool.iter().map(|p| entropy(p.values())).sum::<f64>() / m;
    let mut mean = vec![0.0; k];
    for p in pool {
        for (acc, v) in mean.iter_mut().zip(p.values()) {
            *acc += v / m;
        }
    }
    let score = (entropy(&mean) - mean_entropy).max(0.0);
    Ok(Disagreement {
        mean_entropy,
        mean_distribution: ProbabilityVector::from_normalized(mean),
        score,
    })
}

/// The gating input of one fusion unit.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GatingInput {
    pub confidences: Vec<f64>,
    pub margins: Vec<f64>,
    pub entropies: Vec<f64>,
    pub mean_entropy: f64,
    pub disagreement: f64,
    pub x: Vec<f64>,
}

impl GatingInput {
    pub fn from_pool(pool: &[ProbabilityVector]) -> Result<Self> {
        let d = disagreement(pool)?;
        let cues = pool.iter().map(expert_cues).collect::<Result<Vec<_>>>()?;
        let confidences: Vec<f64> = cues.iter().map(|c| c.confidence).collect();
        let margins: Vec<f64> = cues.iter().map(|c| c.margin).collect();
        let entropies: Vec<f64> = cues.iter().map(|c| c.entropy).collect();
        let mut x = Vec::with_capacity(3 * pool.len() + 2);
        x.extend_from_slice(&confidences);
        x.extend_from_slice(&margins);
        x.extend_from_slice(&entropies);
        x.push(d.mean_entropy);
        x.push(d.score);
        Ok(GatingInput {
            confidences,
            margins,
            entropies,
            mean_entropy: d.mean_entropy,
            disagreement: d.score,
            x,
        })
    }
}

/// Calibrated expert distributions grouped by fusion unit: one unit of M
/// class distributions for classification, K units of M Bernoullis for
/// survival.
pub fn calibrated_units(
    record: &LogitRecord,
    calib: &CalibrationState,
    task: TaskKind,
) -> Result<Vec<Vec<ProbabilityVector>>> {
    let scaled = apply_temperatures(record, calib)?;
    let k = task.k();
    if let Some(row) = scaled.iter().find(|row| row.len() != k) {
        return Err(Error::Shape(format!(
            "record {} has a row of {} logits, task has K = {k}",
            record.sample_id,
            row.len()
        )));
    }
    if scaled.iter().flatten().any(|z| !z.is_finite()) {
        return Err(Error::NonFinite(format!("logits of {}", record.sample_id)));
    }
    Ok(if task.is_survival() {
        (0..k)
            .map(|bin| scaled.iter().map(|row| bernoulli(logistic(row[bin]))).collect())
            .collect()
    } else {
        vec![scaled.iter().map(|row| softmax_finite(row)).collect()]
    })
}

/// Calibrated logits grouped by fusion unit (the input of the cue-free
/// gate): the flattened M×K matrix for classification, the M per-bin logits
/// for survival.
pub fn calibrated_unit_logits(
    record: &LogitRecord,
    calib: &CalibrationState,
    task: TaskKind,
) -> Result<Vec<Vec<f64>>> {
    let scaled = apply_temperatures(record, calib)?;
    Ok(if task.is_survival() {
        (0..task.k())
            .map(|bin| scaled.iter().map(|row| row[bin]).collect())
            .collect()
    } else {
        vec![scaled.into_iter().flatten().collect()]
    })
}

/// Gating input of a classification record.
pub fn build_gating_input(record: &LogitRecord, calib: &CalibrationState) -> Result<GatingInput> {
    let k = record.logits.first().map_or(0, Vec::len);
    let units = calibrated_units(record, calib, TaskKind::Classification { k })?;
    GatingInput::from_pool(&units[0])
}

/// One gating input per fusion unit.
pub fn build_gating_inputs(
    record: &LogitRecord,
    calib: &CalibrationState,
    task: TaskKind,
) -> Result<Vec<GatingInput>> {
    calibrated_units(record, calib, task)?
        .iter()
        .map(|pool| GatingInput::from_pool(pool))
        .collect()
}

/// Writes `id, unit, expert, s, gamma, h, h_bar, u` rows for inspection.
/// `unit` is the time bin for survival and 0 for classification.
pub fn write_cue_csv<W: Write>(
    w: W,
    records: &[&LogitRecord],
    calib: &CalibrationState,
    task: TaskKind,
) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["id", "unit", "expert", "s", "gamma", "h", "h_bar", "u"])?;
    for r in records {
        for (unit, g) in build_gating_inputs(r, calib, task)?.iter().enumerate() {
            for m in 0..g.confidences.len() {
                out.write_record([
                    r.sample_id.clone(),
                    unit.to_string(),
                    m.to_string(),
                    g.confidences[m].to_string(),
                    g.margins[m].to_string(),
                    g.entropies[m].to_string(),
                    g.mean_entropy.to_string(),
                    g.disagreement.to_string(),
                ])?;
            }
        }
    }
    out.flush()?;
    Ok(())
}
