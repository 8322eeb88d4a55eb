//! Evaluation metrics and the efficiency score.

use std::io::Read;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

// ─── classification ─────────────────────────────────────────────────────────

/// Mann–Whitney AUC: the fraction of (positive, negative) pairs ranked
/// correctly, ties counting one half. Computed from mid-ranks.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} scores vs {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::NonFinite("AUC score".into()));
    }
    let n_pos = labels.iter().filter(|l| **l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedAuc("labels contain a single class".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // sum of mid-ranks (1-based) of the positives
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += mid * order[i..=j].iter().filter(|&&o| labels[o]).count() as f64;
        i = j + 1;
    }
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// Macro one-vs-rest AUC over class-probability rows. Classes lacking either
/// positives or negatives are skipped; if every class is skipped the AUC is
/// undefined.
pub fn auc_macro(probs: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
    let k = probs.first().map_or(0, Vec::len);
    if probs.len() != labels.len() {
        return Err(Error::Shape("probability rows vs labels".into()));
    }
    let mut total = 0.0;
    let mut used = 0;
    for c in 0..k {
        let is_c: Vec<bool> = labels.iter().map(|l| *l == c).collect();
        if is_c.iter().all(|v| *v) || !is_c.iter().any(|v| *v) {
            continue;
        }
        let scores: Vec<f64> = probs.iter().map(|p| p[c]).collect();
        total += auc(&scores, &is_c)?;
        used += 1;
    }
    if used == 0 {
        return Err(Error::UndefinedAuc("no class has both positives and negatives".into()));
    }
    Ok(total / used as f64)
}

pub fn accuracy(preds: &[usize], labels: &[usize]) -> Result<f64> {
    if preds.len() != labels.len() || preds.is_empty() {
        return Err(Error::Shape("accuracy needs equal, nonempty inputs".into()));
    }
    let hits = preds.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / preds.len() as f64)
}

/// Macro F1 over the classes appearing in either predictions or labels.
pub fn f1(preds: &[usize], labels: &[usize]) -> Result<f64> {
    if preds.len() != labels.len() || preds.is_empty() {
        return Err(Error::Shape("F1 needs equal, nonempty inputs".into()));
    }
    let k = preds.iter().chain(labels).max().map_or(0, |m| m + 1);
    let mut tp = vec![0usize; k];
    let mut fp = vec![0usize; k];
    let mut fneg = vec![0usize; k];
    for (&p, &l) in preds.iter().zip(labels) {
        if p == l {
            tp[p] += 1;
        } else {
            fp[p] += 1;
            fneg[l] += 1;
        }
    }
    let mut total = 0.0;
    let mut used = 0;
    for c in 0..k {
        let support = tp[c] + fp[c] + fneg[c];
        if support == 0 {
            continue;
        }
        total += 2.0 * tp[c] as f64 / (2 * tp[c] + fp[c] + fneg[c]) as f64;
        used += 1;
    }
    Ok(total / used as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerfSummary {
    pub auc: f64,
    pub acc: f64,
    pub f1: f64,
    pub perf: f64,
}

impl PerfSummary {
    pub fn new(auc: f64, acc: f64, f1: f64) -> Self {
        PerfSummary {
            auc,
            acc,
            f1,
            perf: (auc + acc + f1) / 3.0,
        }
    }

    /// Computes AUC/ACC/F1 from fused class distributions and 0-based labels.
    pub fn from_predictions(probs: &[Vec<f64>], labels: &[usize]) -> Result<Self> {
        let preds: Vec<usize> = probs.iter().map(|p| crate::data::argmax(p)).collect();
        Ok(Self::new(
            auc_macro(probs, labels)?,
            accuracy(&preds, labels)?,
            f1(&preds, labels)?,
        ))
    }
}

// ─── survival ───────────────────────────────────────────────────────────────

struct Fenwick(Vec<u64>);

impl Fenwick {
    fn add(&mut self, mut i: usize) {
        i += 1;
        while i < self.0.len() {
            self.0[i] += 1;
            i += i & i.wrapping_neg();
        }
    }

    /// Count of inserted positions `< i`.
    fn prefix(&self, mut i: usize) -> u64 {
        let mut s = 0;
        while i > 0 {
            s += self.0[i];
            i -= i & i.wrapping_neg();
        }
        s
    }
}

/// Harrell's C-index. A pair (i, j) is comparable when `t_i < t_j` and i had
/// the event; it is concordant when `risk_i > risk_j`, and equal risks score
/// one half.
///
/// Runs in O(n log n): samples are swept in decreasing time while a Fenwick
/// tree over risk ranks counts the later samples below, at, and above each
/// event's risk.
pub fn c_index(risks: &[f64], times: &[f64], events: &[bool]) -> Result<f64> {
    let n = risks.len();
    if times.len() != n || events.len() != n {
        return Err(Error::Shape("risks, times and events differ in length".into()));
    }
    if risks.iter().chain(times).any(|v| v.is_nan()) {
        return Err(Error::NonFinite("C-index input".into()));
    }
    let mut sorted_risks = risks.to_vec();
    sorted_risks.sort_by(f64::total_cmp);
    sorted_risks.dedup();
    let rank = |r: f64| sorted_risks.partition_point(|x| *x < r);

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| times[b].total_cmp(&times[a]));
    let mut tree = Fenwick(vec![0; sorted_risks.len() + 1]);
    let mut inserted = 0u64;
    let mut concordant = 0u64;
    let mut tied = 0u64;
    let mut comparable = 0u64;
    let mut i = 0;
    while i < n {
        // group of equal times: none of them is comparable with another
        let mut j = i;
        while j + 1 < n && times[order[j + 1]] == times[order[i]] {
            j += 1;
        }
        for &s in &order[i..=j] {
            if !events[s] {
                continue;
            }
            let r = rank(risks[s]);
            let below = tree.prefix(r);
            let at_or_below = tree.prefix(r + 1);
            concordant += below;
            tied += at_or_below - below;
            comparable += inserted;
        }
        for &s in &order[i..=j] {
            tree.add(rank(risks[s]));
            inserted += 1;
        }
        i = j + 1;
    }
    if comparable == 0 {
        return Err(Error::NoComparablePairs);
    }
    Ok((concordant as f64 + 0.5 * tied as f64) / comparable as f64)
}

// ─── efficiency ─────────────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostProfile {
    pub flops_g: f64,
    pub params_m: f64,
    pub time_h: f64,
}

impl CostProfile {
    fn check(&self) -> Result<()> {
        let all_positive = [self.flops_g, self.params_m, self.time_h]
            .iter()
            .all(|v| v.is_finite() && *v > 0.0);
        if all_positive {
            Ok(())
        } else {
            Err(Error::Invalid(format!("cost components must be positive: {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EffScore {
    pub cost: f64,
    pub eff: f64,
}

/// Geometric-mean cost relative to the reference and the performance ratio
/// divided by it.
pub fn eff_score(candidate: (&CostProfile, f64), reference: (&CostProfile, f64)) -> Result<EffScore> {
    let (c, perf) = candidate;
    let (r, perf0) = reference;
    c.check()?;
    r.check()?;
    if !(perf.is_finite() && perf0.is_finite() && perf0 > 0.0) {
        return Err(Error::Invalid("performance values must be finite, reference positive".into()));
    }
    let ratio = (c.flops_g / r.flops_g) * (c.params_m / r.params_m) * (c.time_h / r.time_h);
    let cost = ratio.cbrt();
    Ok(EffScore {
        cost,
        eff: (perf / perf0) / cost,
    })
}

/// One row of an efficiency table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffRow {
    pub method: String,
    pub flops_g: f64,
    pub params_m: f64,
    pub time_h: f64,
    pub auc: Option<f64>,
    pub acc: Option<f64>,
    pub f1: Option<f64>,
    /// Given directly when the component metrics are not available.
    #[serde(default)]
    pub perf: Option<f64>,
}

impl EffRow {
    pub fn profile(&self) -> CostProfile {
        CostProfile {
            flops_g: self.flops_g,
            params_m: self.params_m,
            time_h: self.time_h,
        }
    }

    pub fn perf(&self) -> Result<f64> {
        if let Some(p) = self.perf {
            return Ok(p);
        }
        match (self.auc, self.acc, self.f1) {
            (Some(a), Some(c), Some(f)) => Ok(PerfSummary::new(a, c, f).perf),
            _ => Err(Error::Invalid(format!(
                "row {:?} needs auc, acc and f1 (or perf)",
                self.method
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffResult {
    pub method: String,
    pub perf: f64,
    pub cost: f64,
    pub eff_score: f64,
}

pub fn read_eff_rows<R: Read>(r: R) -> Result<Vec<EffRow>> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
    let rows = reader.deserialize().collect::<std::result::Result<Vec<EffRow>, _>>()?;
    Ok(rows)
}

/// Scores every row against the row named `reference`.
pub fn eff_table(rows: &[EffRow], reference: &str) -> Result<Vec<EffResult>> {
    let ref_row = rows
        .iter()
        .find(|r| r.method == reference)
        .ok_or_else(|| Error::Invalid(format!("reference method {reference:?} not in table")))?;
    let ref_perf = ref_row.perf()?;
    rows.iter()
        .map(|r| {
            let perf = r.perf()?;
            let s = eff_score((&r.profile(), perf), (&ref_row.profile(), ref_perf))?;
            Ok(EffResult {
                method: r.method.clone(),
                perf,
                cost: s.cost,
                eff_score: s.eff,
            })
        })
        .collect()
}

// ─── ranking ────────────────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankTable {
    /// `ranks[method][task]`, 1 = best.
    pub ranks: Vec<Vec<usize>>,
    pub mean_rank: Vec<f64>,
}

/// Dense ranking per task (column), higher score better, ties share the
/// better rank; plus the mean rank of each method across tasks.
pub fn rank_table(scores: &[Vec<f64>]) -> Result<RankTable> {
    let n_tasks = scores.first().map_or(0, Vec::len);
    if scores.is_empty() || n_tasks == 0 {
        return Err(Error::Invalid("empty score table".into()));
    }
    if scores.iter().any(|row| row.len() != n_tasks) {
        return Err(Error::Shape("ragged score table".into()));
    }
    if scores.iter().flatten().any(|v| v.is_nan()) {
        return Err(Error::NonFinite("score table".into()));
    }
    let mut ranks = vec![vec![0; n_tasks]; scores.len()];
    for t in 0..n_tasks {
        let mut distinct: Vec<f64> = scores.iter().map(|row| row[t]).collect();
        distinct.sort_by(|a, b| b.total_cmp(a));
        distinct.dedup();
        for (m, row) in scores.iter().enumerate() {
            ranks[m][t] = 1 + distinct.iter().take_while(|v| **v > row[t]).count();
        }
    }
    let mean_rank = ranks
        .iter()
        .map(|r| r.iter().sum::<usize>() as f64 / n_tasks as f64)
        .collect();
    Ok(RankTable { ranks, mean_rank })
}
