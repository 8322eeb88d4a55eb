//! Domain types shared by every module, dataset validation and the JSONL
//! logit-exchange format.
//!
//! A dataset file starts with a header line
//! `{"meta": {"task": "classification", "K": 3, "experts": ["a", "b"]}}`
//! followed by one [`LogitRecord`] per line.

use std::collections::HashSet;
use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Lower bound applied to probabilities before any logarithm.
pub const PROB_FLOOR: f64 = 1e-12;

/// Tolerance of the sum-to-one invariant of [`ProbabilityVector`].
pub const SIMPLEX_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskKind {
    /// `k` classes.
    Classification { k: usize },
    /// `k` discrete time bins.
    Survival { k: usize },
}

impl TaskKind {
    pub fn k(&self) -> usize {
        match *self {
            TaskKind::Classification { k } | TaskKind::Survival { k } => k,
        }
    }

    pub fn is_survival(&self) -> bool {
        matches!(self, TaskKind::Survival { .. })
    }

    pub fn name(&self) -> &'static str {
        match self {
            TaskKind::Classification { .. } => "classification",
            TaskKind::Survival { .. } => "survival",
        }
    }

    pub fn from_name(name: &str, k: usize) -> Result<Self> {
        let task = match name {
            "classification" => TaskKind::Classification { k },
            "survival" => TaskKind::Survival { k },
            other => return Err(Error::Invalid(format!("unknown task kind {other:?}"))),
        };
        Ok(task)
    }

    /// Classification needs at least two classes. A single time bin is a
    /// valid (if degenerate) survival discretization.
    pub fn check(&self) -> Result<()> {
        let min = if self.is_survival() { 1 } else { 2 };
        if self.k() < min {
            return Err(Error::Invalid(format!(
                "{} task needs K >= {min}, got {}",
                self.name(),
                self.k()
            )));
        }
        Ok(())
    }
}

/// Ground truth of one sample. Class indices and event bins are 1-based, as
/// in the exchange format; use [`Label::class_index`] / [`Label::bin_index`]
/// for 0-based access.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Label {
    Class(usize),
    Survival { bin: usize, event: bool },
}

impl Label {
    pub fn class_index(&self) -> Option<usize> {
        match *self {
            Label::Class(c) => c.checked_sub(1),
            Label::Survival { .. } => None,
        }
    }

    pub fn bin_index(&self) -> Option<(usize, bool)> {
        match *self {
            Label::Survival { bin, event } => bin.checked_sub(1).map(|b| (b, event)),
            Label::Class(_) => None,
        }
    }

    /// Stratum used for stratified splitting: the class for classification,
    /// the event indicator for survival.
    pub fn stratum(&self) -> usize {
        match *self {
            Label::Class(c) => c,
            Label::Survival { event, .. } => event as usize,
        }
    }

    fn check(&self, task: TaskKind) -> std::result::Result<(), String> {
        let k = task.k();
        match (*self, task) {
            (Label::Class(c), TaskKind::Classification { .. }) => {
                if (1..=k).contains(&c) {
                    Ok(())
                } else {
                    Err(format!("class {c} outside 1..={k}"))
                }
            }
            (Label::Survival { bin, .. }, TaskKind::Survival { .. }) => {
                if (1..=k).contains(&bin) {
                    Ok(())
                } else {
                    Err(format!("event bin {bin} outside 1..={k}"))
                }
            }
            (Label::Class(_), TaskKind::Survival { .. }) => {
                Err("class label in a survival dataset".into())
            }
            (Label::Survival { .. }, TaskKind::Classification { .. }) => {
                Err("survival label in a classification dataset".into())
            }
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum LabelRepr {
    Class(usize),
    Survival { bin: usize, event: u8 },
}

impl Serialize for Label {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match *self {
            Label::Class(c) => LabelRepr::Class(c),
            Label::Survival { bin, event } => LabelRepr::Survival {
                bin,
                event: event as u8,
            },
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Label {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        match LabelRepr::deserialize(d)? {
            LabelRepr::Class(c) => Ok(Label::Class(c)),
            LabelRepr::Survival { bin, event } => match event {
                0 | 1 => Ok(Label::Survival {
                    bin,
                    event: event == 1,
                }),
                e => Err(D::Error::custom(format!("event indicator must be 0 or 1, got {e}"))),
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitRole {
    Train,
    Calibration,
    Validation,
    Test,
}

impl fmt::Display for SplitRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            SplitRole::Train => "train",
            SplitRole::Calibration => "calibration",
            SplitRole::Validation => "validation",
            SplitRole::Test => "test",
        };
        f.write_str(s)
    }
}

/// One sample: the M×K matrix of expert logits (row m = expert m).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogitRecord {
    #[serde(rename = "id")]
    pub sample_id: String,
    pub fold: u32,
    #[serde(rename = "role")]
    pub split_role: SplitRole,
    pub label: Label,
    pub logits: Vec<Vec<f64>>,
}

impl LogitRecord {
    pub fn n_experts(&self) -> usize {
        self.logits.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExpertPoolMeta {
    pub expert_names: Vec<String>,
    pub task: TaskKind,
}

impl ExpertPoolMeta {
    pub fn n_experts(&self) -> usize {
        self.expert_names.len()
    }
}

#[derive(Serialize, Deserialize)]
struct MetaRepr {
    task: String,
    #[serde(rename = "K")]
    k: usize,
    experts: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct HeaderRepr {
    meta: MetaRepr,
}

/// A pool description plus its records.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub meta: ExpertPoolMeta,
    pub records: Vec<LogitRecord>,
}

impl Dataset {
    pub fn read_jsonl<R: BufRead>(reader: R) -> Result<Self> {
        let mut lines = reader.lines().enumerate().filter(|(_, l)| match l {
            Ok(l) => !l.trim().is_empty(),
            Err(_) => true,
        });
        let (_, header) = lines
            .next()
            .ok_or_else(|| Error::Invalid("missing dataset header line".into()))?;
        let header: HeaderRepr =
            serde_json::from_str(&header?).map_err(|source| Error::Parse { line: 1, source })?;
        let task = TaskKind::from_name(&header.meta.task, header.meta.k)?;
        let meta = ExpertPoolMeta {
            expert_names: header.meta.experts,
            task,
        };
        let mut records = Vec::new();
        for (i, line) in lines {
            let record: LogitRecord = serde_json::from_str(&line?)
                .map_err(|source| Error::Parse { line: i + 1, source })?;
            records.push(record);
        }
        Ok(Dataset { meta, records })
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        let header = HeaderRepr {
            meta: MetaRepr {
                task: self.meta.task.name().to_string(),
                k: self.meta.task.k(),
                experts: self.meta.expert_names.clone(),
            },
        };
        serde_json::to_writer(&mut w, &header)?;
        writeln!(w)?;
        for r in &self.records {
            serde_json::to_writer(&mut w, r)?;
            writeln!(w)?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::read_jsonl(std::io::BufReader::new(file))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(file);
        self.write_jsonl(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn with_role(&self, role: SplitRole) -> Vec<&LogitRecord> {
        self.records.iter().filter(|r| r.split_role == role).collect()
    }
}

// ─── probability vectors ────────────────────────────────────────────────────

/// A distribution over K outcomes: entries in [0, 1] summing to 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ProbabilityVector(Vec<f64>);

impl ProbabilityVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Invalid("empty probability vector".into()));
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0 || *v > 1.0) {
            return Err(Error::Invalid(format!(
                "probability entries outside [0, 1]: {values:?}"
            )));
        }
        let sum: f64 = values.iter().sum();
        if (sum - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::Invalid(format!("probabilities sum to {sum}")));
        }
        Ok(ProbabilityVector(values))
    }

    /// Wraps values produced by a normalizing computation in this crate.
    pub(crate) fn from_normalized(values: Vec<f64>) -> Self {
        debug_assert!(
            values.iter().all(|v| (0.0..=1.0).contains(v)),
            "probability out of range: {values:?}"
        );
        debug_assert!(
            (values.iter().sum::<f64>() - 1.0).abs() <= SIMPLEX_TOL,
            "probabilities do not sum to one: {values:?}"
        );
        ProbabilityVector(values)
    }

    pub fn uniform(k: usize) -> Self {
        ProbabilityVector(vec![1.0 / k as f64; k])
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn argmax(&self) -> usize {
        argmax(&self.0)
    }

    /// Floors every entry at [`PROB_FLOOR`] and renormalizes.
    pub fn clamped(&self) -> Self {
        let floored: Vec<f64> = self.0.iter().map(|p| p.max(PROB_FLOOR)).collect();
        let sum: f64 = floored.iter().sum();
        ProbabilityVector::from_normalized(floored.into_iter().map(|p| p / sum).collect())
    }

    /// Natural log of the clamped distribution.
    pub fn clamped_log(&self) -> Vec<f64> {
        self.clamped().0.iter().map(|p| p.ln()).collect()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Max-subtracted softmax. Errors on non-finite input.
pub fn softmax(logits: &[f64]) -> Result<ProbabilityVector> {
    if logits.is_empty() {
        return Err(Error::Invalid("softmax of an empty vector".into()));
    }
    if let Some(bad) = logits.iter().find(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("softmax input contains {bad}")));
    }
    Ok(softmax_finite(logits))
}

pub(crate) fn softmax_finite(logits: &[f64]) -> ProbabilityVector {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    ProbabilityVector::from_normalized(exps.into_iter().map(|e| e / sum).collect())
}

// ─── validation ─────────────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub sample_id: String,
    pub message: String,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct ValidationReport {
    pub n_records: usize,
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks every record against the pool description. The report lists all
/// violations; an empty dataset is an error rather than a passing report.
pub fn validate_dataset(records: &[LogitRecord], meta: &ExpertPoolMeta) -> Result<ValidationReport> {
    if records.is_empty() {
        return Err(Error::NoRecords);
    }
    let mut violations = Vec::new();
    let mut meta_violation = |message: String| {
        violations.push(Violation {
            sample_id: "<meta>".into(),
            message,
        })
    };
    if let Err(e) = meta.task.check() {
        meta_violation(e.to_string());
    }
    if meta.expert_names.is_empty() {
        meta_violation("pool has no experts".into());
    }
    let mut names = HashSet::new();
    for name in &meta.expert_names {
        if !names.insert(name) {
            meta_violation(format!("duplicate expert name {name:?}"));
        }
    }

    let m = meta.n_experts();
    let k = meta.task.k();
    let mut ids = HashSet::new();
    for r in records {
        let mut push = |message: String| {
            violations.push(Violation {
                sample_id: r.sample_id.clone(),
                message,
            })
        };
        if !ids.insert(r.sample_id.as_str()) {
            push("duplicate sample id".into());
        }
        if r.logits.len() != m {
            push(format!("expected {m} expert rows, found {}", r.logits.len()));
        }
        for (row, logits) in r.logits.iter().enumerate() {
            if logits.len() != k {
                push(format!("expert row {row} has {} logits, expected {k}", logits.len()));
            }
            if logits.iter().any(|z| !z.is_finite()) {
                push(format!("expert row {row} contains a non-finite logit"));
            }
        }
        if let Err(msg) = r.label.check(meta.task) {
            push(msg);
        }
    }
    Ok(ValidationReport {
        n_records: records.len(),
        violations,
    })
}
