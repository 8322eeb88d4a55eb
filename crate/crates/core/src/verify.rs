//! Numerical checks of the product-fusion guarantees.
//!
//! * the cross-entropy of a weighted product splits into the weighted sum of
//!   the expert cross-entropies plus `ln Z(w)`, with `ln Z(w) ≤ 0`;
//! * a simplex grid search (vertices included) never does worse than the
//!   best single expert, classification and bin-wise survival alike.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::data::ProbabilityVector;
use crate::error::{Error, Result};
use crate::fusion::product_fuse;
use crate::gate::SimplexWeights;
use crate::survival::{bernoulli, bin_targets, survival_nll, HazardCurve, EVENT};

/// Largest pool the exhaustive grid accepts.
pub const MAX_GRID_EXPERTS: usize = 4;
pub const DEFAULT_GRID_STEP: f64 = 0.05;

/// `E_{Y~p_data}[-ln q(Y)]` with `q` clamped at [`crate::data::PROB_FLOOR`].
pub fn cross_entropy(p_data: &ProbabilityVector, q: &ProbabilityVector) -> Result<f64> {
    if p_data.len() != q.len() {
        return Err(Error::Shape("cross-entropy of vectors of different length".into()));
    }
    Ok(p_data
        .values()
        .iter()
        .zip(q.clamped().values())
        .filter(|(p, _)| **p > 0.0)
        .map(|(p, q)| -p * q.ln())
        .sum())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Decomposition {
    /// Cross-entropy of the fused distribution.
    pub fused_ce: f64,
    /// `Σ_m w_m H(p_data, p_m)`.
    pub weighted_expert_ce: f64,
    pub log_normalizer: f64,
    pub residual: f64,
}

pub fn ce_decomposition_check(
    p_data: &ProbabilityVector,
    pool: &[ProbabilityVector],
    w: &SimplexWeights,
) -> Result<Decomposition> {
    let pool: Vec<ProbabilityVector> = pool.iter().map(ProbabilityVector::clamped).collect();
    let fused = product_fuse(&pool, w)?;
    let fused_ce = cross_entropy(p_data, &fused.distribution)?;
    let mut weighted_expert_ce = 0.0;
    for (p, wm) in pool.iter().zip(w.values()) {
        weighted_expert_ce += wm * cross_entropy(p_data, p)?;
    }
    let rhs = weighted_expert_ce + fused.log_normalizer;
    Ok(Decomposition {
        fused_ce,
        weighted_expert_ce,
        log_normalizer: fused.log_normalizer,
        residual: (fused_ce - rhs).abs(),
    })
}

/// All points of the simplex grid with spacing `1/steps`, in lexicographic
/// order of the weight vector.
pub fn simplex_grid(m: usize, steps: usize) -> Vec<Vec<f64>> {
    fn rec(m: usize, remaining: usize, steps: usize, prefix: &mut Vec<usize>, out: &mut Vec<Vec<f64>>) {
        if prefix.len() + 1 == m {
            prefix.push(remaining);
            out.push(prefix.iter().map(|c| *c as f64 / steps as f64).collect());
            prefix.pop();
            return;
        }
        for c in 0..=remaining {
            prefix.push(c);
            rec(m, remaining - c, steps, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    if m > 0 {
        rec(m, steps, steps, &mut Vec::with_capacity(m), &mut out);
    }
    out
}

fn grid_steps(step: f64) -> Result<usize> {
    if !(step > 0.0 && step <= 1.0) {
        return Err(Error::Invalid(format!("grid step {step} outside (0, 1]")));
    }
    let steps = (1.0 / step).round();
    if ((1.0 / step) - steps).abs() > 1e-9 {
        return Err(Error::Invalid(format!("grid step {step} does not divide 1")));
    }
    Ok(steps as usize)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridOptimum {
    pub w_star: SimplexWeights,
    pub ce_star: f64,
    pub best_expert: usize,
    pub best_expert_ce: f64,
    /// Largest `ln Z(w)` seen over the grid (never positive).
    pub max_log_normalizer: f64,
}

impl GridOptimum {
    pub fn improvement(&self) -> f64 {
        self.best_expert_ce - self.ce_star
    }
}

/// Exhaustive simplex-grid minimization of the fused cross-entropy.
/// Ties keep the lexicographically smallest weight vector.
pub fn proposition1_oracle(p_data: &ProbabilityVector, pool: &[ProbabilityVector], grid_step: f64) -> Result<GridOptimum> {
    let m = pool.len();
    if m == 0 {
        return Err(Error::Invalid("empty pool".into()));
    }
    if m > MAX_GRID_EXPERTS {
        return Err(Error::Invalid(format!(
            "grid search supports at most {MAX_GRID_EXPERTS} experts ({m} given); use a stochastic simplex search instead"
        )));
    }
    let steps = grid_steps(grid_step)?;
    let pool: Vec<ProbabilityVector> = pool.iter().map(ProbabilityVector::clamped).collect();
    let mut best_expert = 0;
    let mut best_expert_ce = f64::INFINITY;
    for (i, p) in pool.iter().enumerate() {
        let ce = cross_entropy(p_data, p)?;
        if ce < best_expert_ce {
            best_expert = i;
            best_expert_ce = ce;
        }
    }
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut max_log_normalizer = f64::NEG_INFINITY;
    for w in simplex_grid(m, steps) {
        let fused = product_fuse(&pool, &SimplexWeights::new(w.clone())?)?;
        max_log_normalizer = max_log_normalizer.max(fused.log_normalizer);
        let ce = cross_entropy(p_data, &fused.distribution)?;
        if best.as_ref().is_none_or(|(b, _)| ce < *b) {
            best = Some((ce, w));
        }
    }
    let (ce_star, w) = best.expect("grid has at least one point");
    Ok(GridOptimum {
        w_star: SimplexWeights::new(w)?,
        ce_star,
        best_expert,
        best_expert_ce,
        max_log_normalizer,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BinReport {
    pub n_at_risk: usize,
    pub event_rate: f64,
    pub optimum: Option<GridOptimum>,
    /// Cross-entropy of the best single expert in this bin.
    pub onehot_ce: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Corollary1Report {
    pub bins: Vec<BinReport>,
    /// Total NLL of every expert, computed directly from the survival NLL.
    pub expert_nll: Vec<f64>,
    pub best_expert_nll: f64,
    /// Total NLL when each bin picks its best expert.
    pub binwise_onehot_nll: f64,
    /// Total NLL with the grid-optimal weights in every bin.
    pub binwise_grid_nll: f64,
    pub holds: bool,
}

/// Bin-wise application of the grid oracle to a survival pool. Each expert
/// is one hazard curve shared by all samples; the per-bin data
/// distribution is the empirical event rate among samples whose likelihood
/// involves that bin.
pub fn corollary1_oracle(curves: &[HazardCurve], labels: &[(usize, bool)], grid_step: f64) -> Result<Corollary1Report> {
    let k = curves
        .first()
        .ok_or_else(|| Error::Invalid("empty survival pool".into()))?
        .len();
    if curves.iter().any(|c| c.len() != k) {
        return Err(Error::Shape("hazard curves differ in length".into()));
    }
    if labels.is_empty() {
        return Err(Error::Invalid("no survival labels".into()));
    }
    let mut at_risk = vec![0usize; k];
    let mut events = vec![0usize; k];
    for &(bin, event) in labels {
        if !(1..=k).contains(&bin) {
            return Err(Error::Invalid(format!("event bin {bin} outside 1..={k}")));
        }
        for (j, t) in bin_targets(k, bin, event).iter().enumerate() {
            if let Some(t) = t {
                at_risk[j] += 1;
                if *t == EVENT {
                    events[j] += 1;
                }
            }
        }
    }
    let expert_nll: Vec<f64> = curves
        .iter()
        .map(|h| {
            labels
                .iter()
                .map(|&(bin, event)| survival_nll(h, bin, event))
                .sum::<Result<f64>>()
        })
        .collect::<Result<_>>()?;
    let best = (0..curves.len())
        .min_by(|&a, &b| expert_nll[a].total_cmp(&expert_nll[b]))
        .expect("nonempty pool");
    let best_expert_nll = expert_nll[best];

    // the selected and fused curves are scored with the same per-sample NLL
    // as the experts, so a selection equal to the best expert ties exactly
    let mut selected = curves[best].hazards().to_vec();
    let mut fused = selected.clone();
    let mut bins = Vec::with_capacity(k);
    for j in 0..k {
        if at_risk[j] == 0 {
            bins.push(BinReport {
                n_at_risk: 0,
                event_rate: 0.0,
                optimum: None,
                onehot_ce: 0.0,
            });
            continue;
        }
        let rate = events[j] as f64 / at_risk[j] as f64;
        let p_data = ProbabilityVector::new(vec![rate, 1.0 - rate])?;
        let pool: Vec<ProbabilityVector> = curves.iter().map(|h| bernoulli(h.hazards()[j])).collect();
        let opt = proposition1_oracle(&p_data, &pool, grid_step)?;
        // keep the overall best expert unless another one is strictly better here
        let best_here = cross_entropy(&p_data, &pool[best])?;
        let pick = if opt.best_expert_ce < best_here - 1e-12 * best_here.abs().max(1.0) {
            opt.best_expert
        } else {
            best
        };
        selected[j] = curves[pick].hazards()[j];
        fused[j] = product_fuse(&pool, &opt.w_star)?.distribution.values()[EVENT];
        bins.push(BinReport {
            n_at_risk: at_risk[j],
            event_rate: rate,
            onehot_ce: opt.best_expert_ce,
            optimum: Some(opt),
        });
    }
    let total = |h: Vec<f64>| -> Result<f64> {
        let h = HazardCurve::new(h)?;
        labels.iter().map(|&(bin, event)| survival_nll(&h, bin, event)).sum()
    };
    let onehot_total = total(selected)?;
    let grid_total = total(fused)?;
    let slack = 1e-9 * best_expert_nll.abs().max(1.0);
    Ok(Corollary1Report {
        holds: onehot_total <= best_expert_nll && grid_total <= onehot_total + slack,
        bins,
        expert_nll,
        best_expert_nll,
        binwise_onehot_nll: onehot_total,
        binwise_grid_nll: grid_total,
    })
}

// ─── randomized certificate ─────────────────────────────────────────────────

/// Random point of the simplex (flat Dirichlet), floored away from zero.
pub fn random_distribution<R: Rng>(k: usize, rng: &mut R) -> ProbabilityVector {
    let raw: Vec<f64> = (0..k)
        .map(|_| -(rng.random::<f64>().max(f64::MIN_POSITIVE)).ln())
        .collect();
    let sum: f64 = raw.iter().sum();
    ProbabilityVector::new(raw.into_iter().map(|v| v / sum).collect())
        .expect("normalized Dirichlet draw")
        .clamped()
}

/// A pool whose members are each sharp and right on a different slice of
/// the outcomes and nearly flat elsewhere, so no single member dominates.
pub fn complementary_pool<R: Rng>(p_data: &ProbabilityVector, m: usize, rng: &mut R) -> Vec<ProbabilityVector> {
    let k = p_data.len();
    (0..m)
        .map(|i| {
            let sharp = 0.8 + 0.2 * rng.random::<f64>();
            let raw: Vec<f64> = (0..k)
                .map(|y| {
                    let mine = y % m == i;
                    let base = if mine { p_data.values()[y] } else { 1.0 / k as f64 };
                    let noise = 1.0 + 0.1 * (rng.random::<f64>() - 0.5);
                    (if mine { sharp } else { 1.0 - sharp + 0.05 }) * base * noise
                })
                .collect();
            let sum: f64 = raw.iter().sum();
            ProbabilityVector::new(raw.into_iter().map(|v| v / sum).collect())
                .expect("normalized")
                .clamped()
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub trials: usize,
    pub failures: usize,
    pub worst: f64,
    pub threshold: f64,
    pub passed: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub counterexample: Option<serde_json::Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Certificate {
    pub seed: u64,
    pub passed: bool,
    pub checks: Vec<CheckResult>,
}

fn random_weights<R: Rng>(m: usize, rng: &mut R) -> SimplexWeights {
    SimplexWeights::new(random_distribution(m, rng).into_inner()).expect("simplex draw")
}

/// Runs the randomized identity and inequality checks.
pub fn certify(seed: u64) -> Result<Certificate> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut checks = Vec::new();

    // decomposition residual and normalizer bound
    let (mut worst_res, mut worst_z) = (0.0f64, f64::NEG_INFINITY);
    let (mut res_fail, mut z_fail) = (0, 0);
    let (mut res_cx, mut z_cx) = (None, None);
    let trials = 10_000;
    for _ in 0..trials {
        let m = rng.random_range(1..=6);
        let k = rng.random_range(2..=8);
        let pool: Vec<_> = (0..m).map(|_| random_distribution(k, &mut rng)).collect();
        let p_data = random_distribution(k, &mut rng);
        let w = random_weights(m, &mut rng);
        let d = ce_decomposition_check(&p_data, &pool, &w)?;
        worst_res = worst_res.max(d.residual);
        worst_z = worst_z.max(d.log_normalizer.exp());
        let cx = || serde_json::json!({"p_data": p_data, "pool": pool, "w": w});
        if d.residual >= 1e-9 {
            res_fail += 1;
            res_cx.get_or_insert_with(cx);
        }
        if d.log_normalizer.exp() > 1.0 + 1e-12 {
            z_fail += 1;
            z_cx.get_or_insert_with(cx);
        }
    }
    checks.push(CheckResult {
        name: "ce_decomposition_residual".into(),
        trials,
        failures: res_fail,
        worst: worst_res,
        threshold: 1e-9,
        passed: res_fail == 0,
        counterexample: res_cx,
    });
    checks.push(CheckResult {
        name: "normalizer_bound".into(),
        trials,
        failures: z_fail,
        worst: worst_z,
        threshold: 1.0 + 1e-12,
        passed: z_fail == 0,
        counterexample: z_cx,
    });

    // grid optimum never worse than the best expert
    let trials = 100;
    let (mut fail, mut worst, mut cx) = (0, f64::NEG_INFINITY, None);
    for i in 0..trials {
        let m = 2 + i % 2;
        let k = if (i / 2) % 2 == 0 { 2 } else { 5 };
        let p_data = random_distribution(k, &mut rng);
        let pool = if i % 4 < 2 {
            complementary_pool(&p_data, m, &mut rng)
        } else {
            (0..m).map(|_| random_distribution(k, &mut rng)).collect()
        };
        let opt = proposition1_oracle(&p_data, &pool, DEFAULT_GRID_STEP)?;
        let gap = opt.ce_star - opt.best_expert_ce;
        worst = worst.max(gap);
        if gap > 1e-12 {
            fail += 1;
            cx.get_or_insert_with(|| serde_json::json!({"p_data": p_data, "pool": pool}));
        }
    }
    checks.push(CheckResult {
        name: "grid_optimum_vs_best_expert".into(),
        trials,
        failures: fail,
        worst,
        threshold: 1e-12,
        passed: fail == 0,
        counterexample: cx,
    });

    // bin-wise survival version
    let trials = 50;
    let (mut fail, mut worst, mut cx) = (0, f64::NEG_INFINITY, None);
    for _ in 0..trials {
        let (curves, labels) = random_survival_pool(&mut rng);
        let rep = corollary1_oracle(&curves, &labels, DEFAULT_GRID_STEP)?;
        worst = worst.max(rep.binwise_grid_nll - rep.best_expert_nll);
        if !rep.holds {
            fail += 1;
            cx.get_or_insert_with(|| serde_json::json!({"curves": curves, "labels": labels}));
        }
    }
    checks.push(CheckResult {
        name: "binwise_survival_vs_best_expert".into(),
        trials,
        failures: fail,
        worst,
        threshold: 0.0,
        passed: fail == 0,
        counterexample: cx,
    });

    Ok(Certificate {
        seed,
        passed: checks.iter().all(|c| c.passed),
        checks,
    })
}

/// Random survival pool: 2–3 expert hazard curves over 2–5 bins and 20–200
/// labels with roughly 30% censoring.
pub fn random_survival_pool<R: Rng>(rng: &mut R) -> (Vec<HazardCurve>, Vec<(usize, bool)>) {
    let m = rng.random_range(2..=3);
    let k = rng.random_range(2..=5);
    let n = rng.random_range(20..=200);
    let curves = (0..m)
        .map(|_| {
            HazardCurve::new((0..k).map(|_| rng.random_range(0.02..0.98)).collect())
                .expect("hazards in (0, 1)")
        })
        .collect();
    let labels = (0..n)
        .map(|_| (rng.random_range(1..=k), rng.random::<f64>() >= 0.3))
        .collect();
    (curves, labels)
}

/// Per-bin Bernoulli form of a hazard curve, `(h_k, 1 - h_k)`.
pub fn bin_distributions(h: &HazardCurve) -> Vec<ProbabilityVector> {
    (0..h.len()).map(|k| h.bin_distribution(k)).collect()
}
