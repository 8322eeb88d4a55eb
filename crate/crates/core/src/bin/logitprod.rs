use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use logitprod::calibration::{fit_temperatures, CalibrationState};
use logitprod::data::{validate_dataset, Dataset, SplitRole};
use logitprod::fusion::{FusionMode, PredictionLine};
use logitprod::gate::{train_gate, GateParameters, TrainConfig};
use logitprod::metrics::{eff_table, read_eff_rows};
use logitprod::pipeline::{evaluate, predict, run_pipeline, FittedFusion, PipelineConfig};
use logitprod::simulator::{generate_pool, PoolSpec};
use logitprod::verify::certify;
use logitprod::Error;

/// Logit-only, sample-adaptive product-of-experts fusion.
#[derive(Parser)]
#[command(name = "logitprod", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Common {
    /// JSON config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// JSONL logit dataset (or CSV table for bench-effscore).
    #[arg(long)]
    data: Option<PathBuf>,
    /// Output file or directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    mode: Option<FusionMode>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic expert pool from a pool spec (--config).
    Simulate(Common),
    /// Check a dataset; exits 1 when it has violations.
    Validate(Common),
    /// Fit per-expert temperatures on the calibration-role records.
    Calibrate(Common),
    /// Calibrate and train a fusion mode on the role-tagged records.
    Train(Common),
    /// Evaluate a trained model (--model dir from `train`) on the test role.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
    },
    /// Randomized numerical certificate; exits 1 when a check fails.
    Verify(Common),
    /// EffScore table from a CSV of costs and performance.
    BenchEffscore {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "Ours")]
        reference: String,
    },
    /// Cross-validated end-to-end run from a pipeline config.
    Pipeline(Common),
}

enum Failure {
    Validation(String),
    Runtime(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Runtime(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(e.into())
    }
}

type Outcome = std::result::Result<(), Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(msg)) => {
            eprintln!("validation failed: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn run(cmd: Command) -> Outcome {
    match cmd {
        Command::Simulate(c) => simulate(&c),
        Command::Validate(c) => validate(&c),
        Command::Calibrate(c) => calibrate(&c),
        Command::Train(c) => train(&c),
        Command::Eval { common, model } => eval(&common, &model),
        Command::Verify(c) => verify(&c),
        Command::BenchEffscore { common, reference } => bench(&common, &reference),
        Command::Pipeline(c) => pipeline(&c),
    }
}

fn need<'a>(p: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path, Failure> {
    p.as_deref()
        .ok_or_else(|| Failure::Runtime(Error::Invalid(format!("--{flag} is required"))))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, Failure> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?).map_err(Error::from)?)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Outcome {
    let mut f = fs::File::create(path)?;
    serde_json::to_writer_pretty(&mut f, value).map_err(Error::from)?;
    writeln!(f)?;
    Ok(())
}

fn print_json<T: Serialize>(value: &T) -> Outcome {
    println!("{}", serde_json::to_string_pretty(value).map_err(Error::from)?);
    Ok(())
}

fn table(header: &[&str], rows: &[Vec<String>]) {
    let mut width: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for r in rows {
        for (w, c) in width.iter_mut().zip(r) {
            *w = (*w).max(c.len());
        }
    }
    let line = |cells: Vec<&str>| {
        let s: Vec<String> = cells
            .iter()
            .zip(&width)
            .map(|(c, w)| format!("{c:>w$}"))
            .collect();
        println!("{}", s.join("  "));
    };
    line(header.to_vec());
    for r in rows {
        line(r.iter().map(String::as_str).collect());
    }
}

fn fmt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |x| format!("{x:.4}"))
}

fn load_checked(c: &Common) -> Result<Dataset, Failure> {
    let ds = Dataset::load(need(&c.data, "data")?)?;
    let report = validate_dataset(&ds.records, &ds.meta)?;
    if let Some(v) = report.violations.first() {
        return Err(Failure::Validation(format!(
            "{} violations, first: {}: {}",
            report.violations.len(),
            v.sample_id,
            v.message
        )));
    }
    Ok(ds)
}

fn simulate(c: &Common) -> Outcome {
    let mut spec: PoolSpec = read_json(need(&c.config, "config")?)?;
    if let Some(s) = c.seed {
        spec.seed = s;
    }
    let (ds, diag) = generate_pool(&spec)?;
    if let Some(out) = &c.out {
        ds.save(out)?;
    }
    let rows: Vec<Vec<String>> = ds
        .meta
        .expert_names
        .iter()
        .enumerate()
        .map(|(m, name)| {
            vec![
                name.clone(),
                format!("{:.4}", spec.accuracies[m]),
                format!("{:.4}", diag.accuracy(m)),
                format!("{:.3}", spec.temperatures_true[m]),
            ]
        })
        .collect();
    table(&["expert", "target_acc", "realized_acc", "temperature"], &rows);
    println!("{} records, task {}", ds.records.len(), ds.meta.task.name());
    Ok(())
}

fn validate(c: &Common) -> Outcome {
    let ds = Dataset::load(need(&c.data, "data")?)?;
    let report = validate_dataset(&ds.records, &ds.meta)?;
    print_json(&report)?;
    let rows: Vec<Vec<String>> = report
        .violations
        .iter()
        .take(20)
        .map(|v| vec![v.sample_id.clone(), v.message.clone()])
        .collect();
    if !rows.is_empty() {
        table(&["id", "violation"], &rows);
    }
    if report.passed() {
        println!("{} records, no violations", report.n_records);
        Ok(())
    } else {
        Err(Failure::Validation(format!("{} violations", report.violations.len())))
    }
}

fn fit_calibration_role(ds: &Dataset) -> Result<CalibrationState, Failure> {
    let calib = ds.with_role(SplitRole::Calibration);
    if calib.is_empty() {
        return Err(Failure::Validation("no calibration-role records".into()));
    }
    Ok(fit_temperatures(&calib, ds.meta.task)?)
}

fn print_calibration(ds: &Dataset, state: &CalibrationState) {
    let rows: Vec<Vec<String>> = ds
        .meta
        .expert_names
        .iter()
        .enumerate()
        .map(|(m, name)| {
            vec![
                name.clone(),
                format!("{:.4}", state.temperatures[m]),
                format!("{:.4}", state.nll_before[m]),
                format!("{:.4}", state.nll_after[m]),
            ]
        })
        .collect();
    table(&["expert", "tau", "nll_before", "nll_after"], &rows);
}

fn calibrate(c: &Common) -> Outcome {
    let ds = load_checked(c)?;
    let state = fit_calibration_role(&ds)?;
    if let Some(out) = &c.out {
        write_json(out, &state)?;
    }
    print_json(&state)?;
    print_calibration(&ds, &state);
    Ok(())
}

fn train_config(c: &Common) -> Result<TrainConfig, Failure> {
    let mut cfg = match &c.config {
        Some(p) => read_json(p)?,
        None => TrainConfig::default(),
    };
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn train(c: &Common) -> Outcome {
    let ds = load_checked(c)?;
    let mode = c.mode.unwrap_or(FusionMode::LogitProd);
    let cfg = train_config(c)?;
    let state = fit_calibration_role(&ds)?;
    let out = need(&c.out, "out")?;
    fs::create_dir_all(out)?;
    write_json(&out.join("calibration.json"), &state)?;
    print_calibration(&ds, &state);
    if !mode.is_learnable() {
        println!("mode {mode} has no trainable parameters");
        return Ok(());
    }
    let (gates, trace) = train_gate(&ds.records, &state, ds.meta.task, mode, &cfg)?;
    write_json(&out.join("gate.json"), &gates)?;
    trace.write_csv(fs::File::create(out.join("trace.csv"))?)?;
    let best = &trace.epochs[trace.best_epoch];
    table(
        &["mode", "params", "epochs", "best_epoch", "train_loss", "val_loss"],
        &[vec![
            mode.to_string(),
            gates.n_params().to_string(),
            (trace.epochs.len() - 1).to_string(),
            trace.best_epoch.to_string(),
            format!("{:.5}", best.train_loss),
            format!("{:.5}", best.val_loss),
        ]],
    );
    Ok(())
}

fn eval(c: &Common, model: &Path) -> Outcome {
    let ds = load_checked(c)?;
    let task = ds.meta.task;
    let calibration: CalibrationState = read_json(&model.join("calibration.json"))?;
    let gate_path = model.join("gate.json");
    let gates: Option<GateParameters> = if gate_path.exists() { Some(read_json(&gate_path)?) } else { None };
    let mode = c
        .mode
        .or(gates.as_ref().map(|g| g.mode))
        .unwrap_or(FusionMode::LogitProd);
    let fitted = FittedFusion {
        mode,
        calibration,
        gates: gates.filter(|g| g.mode == mode),
        trace: None,
    };
    let test = ds.with_role(SplitRole::Test);
    if test.is_empty() {
        return Err(Failure::Validation("no test-role records".into()));
    }
    let preds = predict(&test, &fitted, task)?;
    let metrics = evaluate(&test, &preds, task)?;
    if let Some(out) = &c.out {
        fs::create_dir_all(out)?;
        let mut f = std::io::BufWriter::new(fs::File::create(out.join("predictions.jsonl"))?);
        for (r, units) in test.iter().zip(&preds) {
            serde_json::to_writer(&mut f, &PredictionLine::new(&r.sample_id, mode, task, units)).map_err(Error::from)?;
            writeln!(f)?;
        }
        f.flush()?;
        write_json(&out.join("metrics.json"), &metrics)?;
    }
    print_json(&metrics)?;
    table(
        &["mode", "n", "loss", "auc", "acc", "f1", "c_index"],
        &[vec![
            mode.to_string(),
            metrics.n.to_string(),
            format!("{:.4}", metrics.loss),
            fmt(metrics.auc),
            fmt(metrics.acc),
            fmt(metrics.f1),
            fmt(metrics.c_index),
        ]],
    );
    Ok(())
}

fn verify(c: &Common) -> Outcome {
    let cert = certify(c.seed.unwrap_or(0))?;
    if let Some(out) = &c.out {
        write_json(out, &cert)?;
    }
    print_json(&cert)?;
    let rows: Vec<Vec<String>> = cert
        .checks
        .iter()
        .map(|k| {
            vec![
                k.name.clone(),
                k.trials.to_string(),
                k.failures.to_string(),
                format!("{:.3e}", k.worst),
                if k.passed { "PASS" } else { "FAIL" }.into(),
            ]
        })
        .collect();
    table(&["check", "trials", "failures", "worst", "result"], &rows);
    if cert.passed {
        Ok(())
    } else {
        Err(Failure::Validation("certificate has failing checks".into()))
    }
}

fn bench(c: &Common, reference: &str) -> Outcome {
    let path = need(&c.data, "data")?;
    let rows = read_eff_rows(fs::File::open(path)?)?;
    let results = eff_table(&rows, reference)?;
    if let Some(out) = &c.out {
        write_json(out, &results)?;
    }
    print_json(&results)?;
    let rows: Vec<Vec<String>> = results
        .iter()
        .map(|r| {
            vec![
                r.method.clone(),
                format!("{:.4}", r.perf),
                format!("{:.4}", r.cost),
                format!("{:.2}", r.eff_score),
            ]
        })
        .collect();
    table(&["method", "perf", "cost", "eff_score"], &rows);
    Ok(())
}

fn pipeline(c: &Common) -> Outcome {
    let mut cfg = PipelineConfig::load(need(&c.config, "config")?)?;
    if let Some(d) = &c.data {
        cfg.data.path = Some(d.clone());
        cfg.data.simulate = None;
    }
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(m) = c.mode {
        cfg.fusion_mode = m;
    }
    let ds = cfg.load_dataset()?;
    let report = validate_dataset(&ds.records, &ds.meta)?;
    if !report.passed() {
        return Err(Failure::Validation(format!("{} violations in data", report.violations.len())));
    }
    let summary = run_pipeline(&cfg, c.out.as_deref())?;
    print_json(&summary)?;
    let rows: Vec<Vec<String>> = summary
        .folds
        .iter()
        .map(|f| {
            vec![
                f.fold.to_string(),
                f.n_test.to_string(),
                format!("{:.4}", f.metrics.loss),
                fmt(f.metrics.auc),
                fmt(f.metrics.acc),
                fmt(f.metrics.f1),
                fmt(f.metrics.c_index),
            ]
        })
        .collect();
    table(&["fold", "n_test", "loss", "auc", "acc", "f1", "c_index"], &rows);
    for (name, s) in &summary.aggregate {
        println!("{name:>8}: {:.4} ± {:.4}", s.mean, s.std);
    }
    Ok(())
}
