//! Acceptance criteria, run as a plain binary: every criterion prints one
//! `criterion N [PASS|FAIL]` line and the process fails if any criterion does.

use std::fs::File;
use std::panic::catch_unwind;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use logitprod::ablation::{run_seed, AblationConfig};
use logitprod::calibration::{expert_nll, fit_temperatures};
use logitprod::data::SplitRole;
use logitprod::fusion::FusionMode;
use logitprod::gate::{build_examples, gate_backward, mean_loss, GateParameters, SimplexWeights};
use logitprod::metrics::{c_index, eff_table, read_eff_rows};
use logitprod::pipeline::{run_pipeline, PipelineConfig};
use logitprod::simulator::{generate_pool, PoolSpec};
use logitprod::verify::{
    ce_decomposition_check, complementary_pool, corollary1_oracle, proposition1_oracle, random_distribution,
    random_survival_pool, DEFAULT_GRID_STEP,
};

type Outcome = (bool, String);

fn fixture(name: &str) -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

#[derive(Deserialize)]
struct Printed {
    method: String,
    eff_score: f64,
}

fn criterion_1_effscore_table() -> Outcome {
    let start = Instant::now();
    let rows = read_eff_rows(File::open(fixture("effscore_table.csv")).unwrap()).unwrap();
    let results = eff_table(&rows, "Ours").unwrap();
    let elapsed = start.elapsed();
    let printed: Vec<Printed> = csv::Reader::from_path(fixture("effscore_table.csv"))
        .unwrap()
        .deserialize()
        .collect::<Result<_, _>>()
        .unwrap();
    assert_eq!(printed.len(), 8);
    let mut misses = Vec::new();
    for (r, p) in results.iter().zip(&printed) {
        assert_eq!(r.method, p.method);
        let diff = (r.eff_score - p.eff_score).abs();
        println!("  {:<15} computed {:.4} printed {:.2} diff {:.4}", r.method, r.eff_score, p.eff_score, diff);
        if diff > 0.02 {
            misses.push(format!("{} ({:.4} vs {:.2})", r.method, r.eff_score, p.eff_score));
        }
    }
    let pass = misses.is_empty() && elapsed < Duration::from_secs(1);
    let detail = if misses.is_empty() {
        format!("8/8 rows within 0.02 in {elapsed:?}")
    } else {
        format!("{}/8 rows within 0.02; outside: {}", 8 - misses.len(), misses.join(", "))
    };
    (pass, detail)
}

fn criterion_2_grid_optimum() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut never_worse, mut strict) = (0, 0);
    for i in 0..100 {
        let m = 2 + i % 2;
        let k = if (i / 2) % 2 == 0 { 2 } else { 5 };
        let p_data = random_distribution(k, &mut rng);
        let pool = if i % 4 < 2 {
            complementary_pool(&p_data, m, &mut rng)
        } else {
            (0..m).map(|_| random_distribution(k, &mut rng)).collect()
        };
        let opt = proposition1_oracle(&p_data, &pool, DEFAULT_GRID_STEP).unwrap();
        if opt.ce_star <= opt.best_expert_ce + 1e-12 {
            never_worse += 1;
        }
        if opt.improvement() > 1e-3 {
            strict += 1;
        }
    }
    let elapsed = start.elapsed();
    let pass = never_worse == 100 && strict >= 30 && elapsed < Duration::from_secs(10);
    let detail = format!("{never_worse}/100 not worse, {strict}/100 strict > 1e-3, {elapsed:?}");
    (pass, detail)
}

fn criterion_3_normalizer_and_decomposition() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut worst_z, mut worst_res) = (0.0f64, 0.0f64);
    let mut ok = 0;
    for _ in 0..10_000 {
        let m = rng.random_range(1..=6);
        let k = rng.random_range(2..=8);
        let pool: Vec<_> = (0..m).map(|_| random_distribution(k, &mut rng)).collect();
        let p_data = random_distribution(k, &mut rng);
        let w = SimplexWeights::new(random_distribution(m, &mut rng).into_inner()).unwrap();
        let d = ce_decomposition_check(&p_data, &pool, &w).unwrap();
        let z = d.log_normalizer.exp();
        worst_z = worst_z.max(z);
        worst_res = worst_res.max(d.residual);
        if z <= 1.0 + 1e-12 && d.residual < 1e-9 {
            ok += 1;
        }
    }
    let elapsed = start.elapsed();
    let pass = ok == 10_000 && elapsed < Duration::from_secs(5);
    let detail = format!("{ok}/10000 draws, max Z {worst_z:.15}, max residual {worst_res:.2e}, {elapsed:?}");
    (pass, detail)
}

/// Relative error `‖a - f‖ / max(‖a‖, ‖f‖)` between the analytic gradient
/// and central differences, over all gate parameters of one configuration.
fn gradient_error(params: &GateParameters, examples: &[logitprod::gate::TrainingExample]) -> f64 {
    let refs: Vec<_> = examples.iter().collect();
    let (_, grad) = gate_backward(params, &refs).unwrap();
    let h = 1e-6;
    let (mut diff, mut norm_a, mut norm_f) = (0.0, 0.0, 0.0);
    let mut p = params.clone();
    for g in 0..params.gates.len() {
        for s in 0..4 {
            for i in 0..params.gates[g].slices()[s].len() {
                let orig = params.gates[g].slices()[s][i];
                p.gates[g].slices_mut()[s][i] = orig + h;
                let up = mean_loss(&p, examples);
                p.gates[g].slices_mut()[s][i] = orig - h;
                let down = mean_loss(&p, examples);
                p.gates[g].slices_mut()[s][i] = orig;
                let fd = (up - down) / (2.0 * h);
                let an = grad.gates[g].slices()[s][i];
                diff += (an - fd).powi(2);
                norm_a += an * an;
                norm_f += fd * fd;
            }
        }
    }
    diff.sqrt() / f64::max(norm_a, norm_f).sqrt()
}

fn criterion_4_gradients() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = [0.0f64; 2];
    for cfg in 0..20 {
        for (t, survival) in [false, true].into_iter().enumerate() {
            let m = rng.random_range(2..=4);
            let k = rng.random_range(2..=4);
            let mut spec = PoolSpec::classification(
                k,
                40,
                (0..m).map(|_| rng.random_range(0.55..0.9)).collect(),
                (0..m).map(|_| rng.random_range(0.5..3.0)).collect(),
                0.3,
                cfg,
            );
            if survival {
                spec.task = "survival".into();
            }
            let (ds, _) = generate_pool(&spec).unwrap();
            let task = ds.meta.task;
            let calib = fit_temperatures(&ds.records.iter().collect::<Vec<_>>(), task).unwrap();
            let batch: Vec<_> = ds.records.iter().take(12).collect();
            let modes = [FusionMode::LogitProd, FusionMode::LearnableSum, FusionMode::LearnableProduct];
            let mode = modes[cfg as usize % 3];
            let examples = build_examples(&batch, &calib, task, mode).unwrap();
            let mut params = GateParameters::init(mode, task, m, rng.random()).unwrap();
            // move away from the symmetric initialization
            for g in &mut params.gates {
                for s in g.slices_mut() {
                    for v in s.iter_mut() {
                        *v += rng.random_range(-0.3..0.3);
                    }
                }
            }
            worst[t] = worst[t].max(gradient_error(&params, &examples));
        }
    }
    let pass = worst.iter().all(|w| *w < 1e-5);
    let detail = format!(
        "max relative error {:.2e} (classification), {:.2e} (survival) over 20 configurations each",
        worst[0], worst[1]
    );
    (pass, detail)
}

fn criterion_6_spec() -> PoolSpec {
    PoolSpec::classification(
        4,
        2000,
        vec![0.60, 0.68, 0.75, 0.82, 0.90],
        vec![0.5, 1.0, 1.0, 2.0, 3.0],
        0.3,
        0,
    )
}

fn criterion_5_calibration_safety() -> Outcome {
    let mut pools: Vec<PoolSpec> = (0..5)
        .map(|s| {
            let mut p = criterion_6_spec();
            p.seed = s;
            p
        })
        .collect();
    let mut surv = PoolSpec::classification(5, 2000, vec![0.7, 0.8, 0.9], vec![0.5, 1.0, 2.5], 0.3, 11);
    surv.task = "survival".into();
    pools.push(surv);
    pools.push(PoolSpec::classification(2, 1000, vec![0.9, 0.6], vec![4.0, 0.3], 0.0, 12));

    let mut safe = true;
    let mut worst_gap = f64::NEG_INFINITY;
    for spec in &pools {
        let (ds, _) = generate_pool(spec).unwrap();
        let calib: Vec<_> = ds.with_role(SplitRole::Calibration);
        let state = fit_temperatures(&calib, ds.meta.task).unwrap();
        for m in 0..spec.m {
            let at_one = expert_nll(&calib, m, 1.0, ds.meta.task).unwrap();
            let fitted = expert_nll(&calib, m, state.temperatures[m], ds.meta.task).unwrap();
            worst_gap = worst_gap.max(fitted - at_one);
            safe &= fitted <= at_one + 1e-6;
        }
    }

    // recovery on a pool of N = 10,000, calibrated on its calibration split
    let mut spec = criterion_6_spec();
    spec.n = 10_000;
    let (ds, _) = generate_pool(&spec).unwrap();
    let calib = ds.with_role(SplitRole::Calibration);
    let state = fit_temperatures(&calib, ds.meta.task).unwrap();
    let rel: Vec<f64> = state
        .temperatures
        .iter()
        .zip(&spec.temperatures_true)
        .map(|(t, truth)| (t - truth * spec.confidence_scale).abs() / (truth * spec.confidence_scale))
        .collect();
    let worst_rel = rel.iter().copied().fold(0.0, f64::max);
    let pass = safe && worst_rel < 0.2;
    let detail = format!(
        "{} pools, worst NLL(fitted) - NLL(1) = {worst_gap:.2e}; recovery at N = 10000 ({} calibration records): {:?} vs {:?}, max rel error {worst_rel:.3}",
        pools.len(),
        calib.len(),
        state.temperatures.iter().map(|t| (t * 1000.0).round() / 1000.0).collect::<Vec<_>>(),
        spec.temperatures_true
    );
    (pass, detail)
}

fn criterion_6_synthetic_end_to_end() -> Outcome {
    let start = Instant::now();
    let cfg = AblationConfig::new(
        vec![FusionMode::LogitProd, FusionMode::UniformProduct, FusionMode::Mean],
        (0..5).collect(),
    );
    let spec = criterion_6_spec();
    let (mut vs_best, mut vs_product, mut vs_mean) = (0, 0, 0);
    for &seed in &cfg.seeds {
        let r = run_seed(&spec, seed, &cfg).unwrap();
        let acc = |name: &str| r.methods[name].acc.unwrap();
        let best = (0..spec.m).map(|m| acc(&format!("expert_{m}"))).fold(0.0, f64::max);
        let (lp, up, mean) = (acc("logitprod"), acc("uniform_product"), acc("mean"));
        println!("  seed {seed}: logitprod {lp:.4} uniform_product {up:.4} mean {mean:.4} best expert {best:.4}");
        vs_best += (lp >= best - 0.005) as usize;
        vs_product += (lp >= up) as usize;
        vs_mean += (lp >= mean) as usize;
    }
    let elapsed = start.elapsed();
    let pass = vs_best >= 4 && vs_product >= 4 && vs_mean >= 4 && elapsed < Duration::from_secs(180);
    let detail = format!(
        "seeds with LogitProd >= best-0.005: {vs_best}/5, >= uniform product: {vs_product}/5, >= mean: {vs_mean}/5, {elapsed:?}"
    );
    (pass, detail)
}

fn brute_c_index(risks: &[f64], times: &[f64], events: &[bool]) -> f64 {
    let (mut twice_score, mut comparable) = (0u64, 0u64);
    for i in 0..risks.len() {
        for j in 0..risks.len() {
            if events[i] && times[i] < times[j] {
                comparable += 1;
                twice_score += if risks[i] > risks[j] {
                    2
                } else if risks[i] == risks[j] {
                    1
                } else {
                    0
                };
            }
        }
    }
    twice_score as f64 / (2 * comparable) as f64
}

fn criterion_7_c_index() -> Outcome {
    let hand = c_index(&[0.9, 0.5, 0.7], &[1.0, 2.0, 3.0], &[true, true, false]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut exact = 0;
    for _ in 0..100 {
        let n = rng.random_range(2..=200);
        // coarse grids force tied times and tied risks
        let times: Vec<f64> = (0..n).map(|_| rng.random_range(0..30) as f64).collect();
        let risks: Vec<f64> = (0..n).map(|_| rng.random_range(0..50) as f64 / 7.0).collect();
        let mut events: Vec<bool> = (0..n).map(|_| rng.random::<f64>() >= 0.3).collect();
        events[0] = true;
        match c_index(&risks, &times, &events) {
            Ok(c) if c == brute_c_index(&risks, &times, &events) => exact += 1,
            Err(_) if !(0..n).any(|i| events[i] && (0..n).any(|j| times[i] < times[j])) => exact += 1,
            _ => {}
        }
    }
    let pass = hand == 2.0 / 3.0 && exact == 100;
    let detail = format!("hand case {hand}, {exact}/100 random instances identical to pair enumeration");
    (pass, detail)
}

fn criterion_8_binwise_survival() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut holds = 0;
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..50 {
        let (curves, labels) = random_survival_pool(&mut rng);
        let rep = corollary1_oracle(&curves, &labels, DEFAULT_GRID_STEP).unwrap();
        worst = worst.max(rep.binwise_onehot_nll - rep.best_expert_nll);
        holds += (rep.binwise_onehot_nll <= rep.best_expert_nll && rep.holds) as usize;
    }
    let pass = holds == 50;
    let detail = format!("{holds}/50 pools, max (bin-wise NLL - best expert NLL) {worst:.3e}");
    (pass, detail)
}

fn criterion_9_determinism() -> Outcome {
    let cfg = PipelineConfig::load(&fixture("pipeline.json")).unwrap();
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for d in &dirs {
        run_pipeline(&cfg, Some(d.path())).unwrap();
    }
    let read = |d: &tempfile::TempDir| std::fs::read(d.path().join("summary.json")).unwrap();
    let (a, b) = (read(&dirs[0]), read(&dirs[1]));
    let pass = !a.is_empty() && a == b;
    let detail = format!("summary.json {} bytes, identical: {}", a.len(), a == b);
    (pass, detail)
}

fn main() -> ExitCode {
    type Criterion = (&'static str, fn() -> Outcome);
    let criteria: [Criterion; 9] = [
        ("EffScore reproduction", criterion_1_effscore_table),
        ("grid optimum vs best expert", criterion_2_grid_optimum),
        ("normalizer bound and decomposition", criterion_3_normalizer_and_decomposition),
        ("gradient correctness", criterion_4_gradients),
        ("calibration safety", criterion_5_calibration_safety),
        ("synthetic end-to-end", criterion_6_synthetic_end_to_end),
        ("C-index oracle equivalence", criterion_7_c_index),
        ("bin-wise survival selection", criterion_8_binwise_survival),
        ("determinism", criterion_9_determinism),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let (pass, detail) = catch_unwind(run).unwrap_or_else(|_| (false, "panicked".into()));
        failed += !pass as usize;
        let tag = if pass { "PASS" } else { "FAIL" };
        println!("criterion {} [{tag}] {name}: {detail}", i + 1);
    }
    println!("acceptance: {}/{} criteria pass", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
