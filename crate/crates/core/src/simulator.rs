//! Synthetic heterogeneous expert pools.
//!
//! Every expert is calibrated by construction before its injected
//! miscalibration: per sample it draws a confidence `c` whose mean is its
//! target accuracy, is correct with probability `c`, and emits logits whose
//! softmax puts exactly `c` on the predicted class. With probability `ρ` a
//! sample is a *shared* event, in which all experts reuse the same
//! confidence quantile, correctness draw and wrong-class offset, so their
//! errors coincide. Logits are then multiplied by `confidence_scale ·
//! temperatures_true[m]`.
//!
//! Survival pools follow the same recipe per time bin, with each bin a
//! two-outcome problem: a latent event bin `T ∈ 1..=K+1` (K+1 meaning no
//! event within the horizon) defines the bin truth `1[k ≥ T]`, and random
//! censoring produces the observed `(bin, event)` label.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, ExpertPoolMeta, Label, LogitRecord, SplitRole, TaskKind};
use crate::error::{Error, Result};
use crate::pipeline::{stratified_folds, stratified_subset};

fn default_scale() -> f64 {
    1.0
}
fn default_jitter() -> f64 {
    0.1
}
fn default_spread() -> f64 {
    0.8
}
fn default_folds() -> usize {
    5
}
fn default_censoring() -> f64 {
    0.3
}
fn default_task() -> String {
    "classification".into()
}

/// Generator configuration, also accepted as a JSON config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolSpec {
    #[serde(rename = "M")]
    pub m: usize,
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(rename = "N")]
    pub n: usize,
    /// Expected argmax accuracy per expert (per bin for survival).
    pub accuracies: Vec<f64>,
    /// Injected miscalibration: logits are multiplied by these.
    pub temperatures_true: Vec<f64>,
    /// Probability that a sample's corruption is shared by all experts.
    #[serde(rename = "correlation")]
    pub rho: f64,
    #[serde(default = "default_scale")]
    pub confidence_scale: f64,
    /// Gaussian logit noise, as a fraction of the logit magnitude.
    #[serde(default = "default_jitter")]
    pub jitter: f64,
    /// Width of the per-sample confidence distribution around the accuracy,
    /// as a fraction of the feasible width (0 = constant confidence).
    #[serde(default = "default_spread")]
    pub confidence_spread: f64,
    #[serde(default = "default_folds")]
    pub folds: usize,
    /// Survival only: probability of random censoring.
    #[serde(default = "default_censoring")]
    pub censoring: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_task")]
    pub task: String,
}

impl PoolSpec {
    /// Classification pool with default noise settings.
    pub fn classification(k: usize, n: usize, accuracies: Vec<f64>, temperatures_true: Vec<f64>, rho: f64, seed: u64) -> Self {
        PoolSpec {
            m: accuracies.len(),
            k,
            n,
            accuracies,
            temperatures_true,
            rho,
            confidence_scale: default_scale(),
            jitter: default_jitter(),
            confidence_spread: default_spread(),
            folds: default_folds(),
            censoring: default_censoring(),
            seed,
            task: default_task(),
        }
    }

    pub fn task_kind(&self) -> Result<TaskKind> {
        TaskKind::from_name(&self.task, self.k)
    }

    pub fn validate(&self) -> Result<()> {
        let task = self.task_kind()?;
        task.check()?;
        if self.m == 0 || self.n == 0 {
            return Err(Error::Invalid("pool needs M >= 1 and N >= 1".into()));
        }
        if self.accuracies.len() != self.m || self.temperatures_true.len() != self.m {
            return Err(Error::Shape(format!(
                "M = {} but {} accuracies and {} temperatures",
                self.m,
                self.accuracies.len(),
                self.temperatures_true.len()
            )));
        }
        let outcomes = if task.is_survival() { 2 } else { self.k };
        let chance = 1.0 / outcomes as f64;
        if let Some(a) = self.accuracies.iter().find(|a| !(chance..=1.0).contains(*a)) {
            return Err(Error::Invalid(format!(
                "infeasible accuracy {a}: must lie in [{chance}, 1]"
            )));
        }
        if self.temperatures_true.iter().any(|t| !(t.is_finite() && *t > 0.0)) {
            return Err(Error::Invalid("true temperatures must be positive".into()));
        }
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if !unit(self.rho) || !unit(self.confidence_spread) || !unit(self.censoring) {
            return Err(Error::Invalid(
                "correlation, confidence_spread and censoring must lie in [0, 1]".into(),
            ));
        }
        if !(self.confidence_scale > 0.0 && self.jitter >= 0.0) {
            return Err(Error::Invalid("confidence_scale must be > 0 and jitter >= 0".into()));
        }
        if self.folds < 2 {
            return Err(Error::Invalid("need at least 2 folds".into()));
        }
        Ok(())
    }
}

/// Ground truth behind a generated pool.
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct PoolDiagnostics {
    /// `correct[i][m][unit]`: whether expert m's argmax matched the truth.
    pub correct: Vec<Vec<Vec<bool>>>,
    /// Whether sample i was a shared-corruption event.
    pub shared: Vec<bool>,
}

impl PoolDiagnostics {
    /// Empirical accuracy of expert `m` over all units.
    pub fn accuracy(&self, m: usize) -> f64 {
        let (hits, total) = self.correct.iter().fold((0usize, 0usize), |(h, t), s| {
            (h + s[m].iter().filter(|c| **c).count(), t + s[m].len())
        });
        hits as f64 / total as f64
    }
}

struct Draw {
    quantile: f64,
    correct: f64,
    offset: f64,
}

impl Draw {
    fn sample<R: Rng>(rng: &mut R) -> Self {
        Draw {
            quantile: rng.random(),
            correct: rng.random(),
            offset: rng.random(),
        }
    }
}

/// Confidence for a quantile `v`: uniform on `acc ± d`, mean `acc`.
fn confidence(acc: f64, outcomes: usize, spread: f64, v: f64) -> f64 {
    let chance = 1.0 / outcomes as f64;
    let d = spread * (acc - chance).min(1.0 - acc);
    acc + d * (2.0 * v - 1.0)
}

/// Logit gap whose softmax puts `c` on one class and `(1-c)/(K-1)` on the rest.
fn logit_gap(c: f64, outcomes: usize) -> f64 {
    let c = c.clamp(1.0 / outcomes as f64, 1.0 - 1e-6);
    (c * (outcomes - 1) as f64 / (1.0 - c)).ln()
}

struct ExpertOutput {
    logits: Vec<f64>,
    predicted: usize,
}

fn expert_unit<R: Rng>(
    spec: &PoolSpec,
    m: usize,
    outcomes: usize,
    truth: usize,
    draw: &Draw,
    noise: &mut R,
) -> ExpertOutput {
    let c = confidence(spec.accuracies[m], outcomes, spec.confidence_spread, draw.quantile);
    let predicted = if draw.correct < c {
        truth
    } else {
        let offset = 1 + ((draw.offset * (outcomes - 1) as f64) as usize).min(outcomes - 2);
        (truth + offset) % outcomes
    };
    let gap = logit_gap(c, outcomes);
    let scale = spec.confidence_scale * spec.temperatures_true[m];
    let sigma = spec.jitter * gap;
    let mut logits = vec![0.0; outcomes];
    logits[predicted] = gap;
    if sigma > 0.0 {
        let normal = Normal::new(0.0, sigma).expect("finite positive sigma");
        for z in logits.iter_mut() {
            *z += normal.sample(noise);
        }
    }
    logits.iter_mut().for_each(|z| *z *= scale);
    ExpertOutput { logits, predicted }
}

fn sample_rng(seed: u64, i: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(i as u64);
    rng
}

/// Generates a pool with stratified fold tags. Roles follow fold 0 as test,
/// fold 1 as validation, a stratified 10% of the rest as calibration and
/// the remainder as train.
pub fn generate_pool(spec: &PoolSpec) -> Result<(Dataset, PoolDiagnostics)> {
    spec.validate()?;
    let task = spec.task_kind()?;
    let k = spec.k;
    let mut records = Vec::with_capacity(spec.n);
    let mut diag = PoolDiagnostics::default();

    for i in 0..spec.n {
        let mut rng = sample_rng(spec.seed, i);
        let shared = rng.random::<f64>() < spec.rho;
        let units = if task.is_survival() { k } else { 1 };
        let outcomes = if task.is_survival() { 2 } else { k };

        let (label, truths) = if task.is_survival() {
            let latent = rng.random_range(1..=k + 1);
            let censor_at = if rng.random::<f64>() < spec.censoring {
                rng.random_range(1..=k)
            } else {
                k + 1
            };
            let label = if latent <= k && latent <= censor_at {
                Label::Survival { bin: latent, event: true }
            } else {
                Label::Survival { bin: censor_at.min(k), event: false }
            };
            // bin truth as a (event, no event) index
            let truths: Vec<usize> = (1..=k)
                .map(|b| if b >= latent { crate::survival::EVENT } else { crate::survival::NO_EVENT })
                .collect();
            (label, truths)
        } else {
            let y = rng.random_range(0..k);
            (Label::Class(y + 1), vec![y])
        };

        let shared_draws: Vec<Draw> = (0..units).map(|_| Draw::sample(&mut rng)).collect();
        let mut logits = vec![vec![0.0; k]; spec.m];
        let mut correct = vec![vec![false; units]; spec.m];
        for m in 0..spec.m {
            for (u, truth) in truths.iter().enumerate() {
                let own;
                let draw = if shared {
                    &shared_draws[u]
                } else {
                    own = Draw::sample(&mut rng);
                    &own
                };
                let out = expert_unit(spec, m, outcomes, *truth, draw, &mut rng);
                correct[m][u] = out.predicted == *truth;
                if task.is_survival() {
                    // hazard logit: event logit minus no-event logit
                    logits[m][u] = out.logits[crate::survival::EVENT] - out.logits[crate::survival::NO_EVENT];
                } else {
                    logits[m] = out.logits;
                }
            }
        }
        diag.correct.push(correct);
        diag.shared.push(shared);
        records.push(LogitRecord {
            sample_id: format!("s{i:06}"),
            fold: 0,
            split_role: SplitRole::Train,
            label,
            logits,
        });
    }

    let strata: Vec<usize> = records.iter().map(|r| r.label.stratum()).collect();
    let folds = stratified_folds(&strata, spec.folds, spec.seed);
    for (r, f) in records.iter_mut().zip(&folds) {
        r.fold = *f;
        r.split_role = match f {
            0 => SplitRole::Test,
            1 => SplitRole::Validation,
            _ => SplitRole::Train,
        };
    }
    let rest: Vec<usize> = (0..records.len()).filter(|&i| folds[i] >= 2).collect();
    let rest_strata: Vec<usize> = rest.iter().map(|&i| strata[i]).collect();
    for j in stratified_subset(&rest_strata, 0.1, spec.seed) {
        records[rest[j]].split_role = SplitRole::Calibration;
    }

    let meta = ExpertPoolMeta {
        expert_names: (0..spec.m).map(|m| format!("expert_{m}")).collect(),
        task,
    };
    Ok((Dataset { meta, records }, diag))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noiseless_perfect_experts_are_always_right() {
        let mut spec = PoolSpec::classification(4, 500, vec![1.0, 1.0, 1.0], vec![1.0, 2.0, 0.5], 0.0, 3);
        spec.jitter = 0.0;
        let (ds, diag) = generate_pool(&spec).unwrap();
        for r in &ds.records {
            let y = r.label.class_index().unwrap();
            for row in &r.logits {
                assert_eq!(crate::data::argmax(row), y);
            }
        }
        assert!(diag.correct.iter().flatten().flatten().all(|c| *c));
    }

    #[test]
    fn full_correlation_shares_error_sets() {
        let spec = PoolSpec::classification(3, 2000, vec![0.7; 4], vec![1.0; 4], 1.0, 9);
        let (_, diag) = generate_pool(&spec).unwrap();
        for s in &diag.correct {
            assert!(s.iter().all(|e| e == &s[0]));
        }
        assert!(diag.correct.iter().any(|s| !s[0][0]));
    }

    #[test]
    fn infeasible_accuracy_is_rejected() {
        let spec = PoolSpec::classification(4, 10, vec![0.2], vec![1.0], 0.0, 0);
        assert!(generate_pool(&spec).is_err());
        let mut spec = PoolSpec::classification(4, 10, vec![0.7], vec![1.0], 0.0, 0);
        spec.task = "survival".into();
        spec.accuracies = vec![0.45];
        assert!(generate_pool(&spec).is_err());
    }

    #[test]
    fn same_spec_same_bytes() {
        let spec = PoolSpec::classification(3, 300, vec![0.6, 0.8], vec![1.0, 2.0], 0.3, 42);
        let write = |spec: &PoolSpec| {
            let mut buf = Vec::new();
            generate_pool(spec).unwrap().0.write_jsonl(&mut buf).unwrap();
            buf
        };
        assert_eq!(write(&spec), write(&spec));
        let mut other = spec.clone();
        other.seed = 43;
        assert_ne!(write(&spec), write(&other));
    }

    #[test]
    fn roles_cover_all_splits() {
        let spec = PoolSpec::classification(3, 600, vec![0.6, 0.8], vec![1.0, 2.0], 0.3, 1);
        let (ds, _) = generate_pool(&spec).unwrap();
        for role in [SplitRole::Train, SplitRole::Calibration, SplitRole::Validation, SplitRole::Test] {
            assert!(!ds.with_role(role).is_empty(), "{role}");
        }
        let report = crate::data::validate_dataset(&ds.records, &ds.meta).unwrap();
        assert!(report.passed());
    }

    #[test]
    fn survival_pool_is_valid() {
        let mut spec = PoolSpec::classification(4, 400, vec![0.7, 0.85], vec![1.0, 1.5], 0.2, 5);
        spec.task = "survival".into();
        let (ds, diag) = generate_pool(&spec).unwrap();
        assert!(crate::data::validate_dataset(&ds.records, &ds.meta).unwrap().passed());
        assert!(ds.records.iter().any(|r| r.label.bin_index().unwrap().1));
        assert!(ds.records.iter().any(|r| !r.label.bin_index().unwrap().1));
        assert!((diag.accuracy(1) - 0.85).abs() < 0.03);
    }
}
