use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn logitprod(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_logitprod"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn fixture(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("fixtures")
        .join(name)
        .to_string_lossy()
        .into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn simulate(dir: &Path) -> String {
    let spec = dir.join("spec.json");
    fs::write(
        &spec,
        r#"{"M": 3, "K": 3, "N": 500, "accuracies": [0.6, 0.75, 0.9],
            "temperatures_true": [0.5, 1.0, 2.0], "correlation": 0.3}"#,
    )
    .unwrap();
    let data = dir.join("pool.jsonl");
    let o = logitprod(&["simulate", "--config", spec.to_str().unwrap(), "--out", data.to_str().unwrap(), "--seed", "4"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("realized_acc"));
    data.to_string_lossy().into_owned()
}

#[test]
fn simulate_validate_calibrate_train_eval() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate(dir.path());

    let o = logitprod(&["validate", "--data", &data]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("no violations"));

    let calib = dir.path().join("calib.json");
    let o = logitprod(&["calibrate", "--data", &data, "--out", calib.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let state: serde_json::Value = serde_json::from_str(&fs::read_to_string(&calib).unwrap()).unwrap();
    assert_eq!(state["temperatures"].as_array().unwrap().len(), 3);

    let model = dir.path().join("model");
    let o = logitprod(&["train", "--data", &data, "--out", model.to_str().unwrap(), "--mode", "logitprod"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(model.join("gate.json").exists() && model.join("trace.csv").exists());

    let eval_dir = dir.path().join("eval");
    let o = logitprod(&[
        "eval",
        "--data",
        &data,
        "--model",
        model.to_str().unwrap(),
        "--out",
        eval_dir.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let metrics: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(eval_dir.join("metrics.json")).unwrap()).unwrap();
    assert!(metrics["acc"].as_f64().unwrap() > 0.7);
    assert_eq!(fs::read_to_string(eval_dir.join("predictions.jsonl")).unwrap().lines().count(), 100);
}

#[test]
fn invalid_data_exits_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate(dir.path());
    let text = fs::read_to_string(&data).unwrap();
    // break the second record: wrong number of expert rows
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    let mut rec: serde_json::Value = serde_json::from_str(&lines[2]).unwrap();
    rec["logits"].as_array_mut().unwrap().pop();
    lines[2] = rec.to_string();
    fs::write(&data, lines.join("\n") + "\n").unwrap();
    assert_eq!(logitprod(&["validate", "--data", &data]).status.code(), Some(1));
    assert_eq!(logitprod(&["calibrate", "--data", &data]).status.code(), Some(1));
}

#[test]
fn runtime_errors_exit_with_two() {
    assert_eq!(logitprod(&["validate", "--data", "/nonexistent.jsonl"]).status.code(), Some(2));
    assert_eq!(logitprod(&["pipeline"]).status.code(), Some(2));
}

#[test]
fn verify_emits_a_passing_certificate() {
    let dir = tempfile::tempdir().unwrap();
    let cert = dir.path().join("cert.json");
    let o = logitprod(&["verify", "--seed", "1", "--out", cert.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(cert).unwrap()).unwrap();
    assert_eq!(v["passed"], true);
    assert_eq!(v["checks"].as_array().unwrap().len(), 4);
}

#[test]
fn bench_effscore_prints_the_table() {
    let o = logitprod(&["bench-effscore", "--data", &fixture("effscore_table.csv")]);
    assert_eq!(o.status.code(), Some(0));
    let out = stdout(&o);
    assert!(out.contains("MLP (3-layer)") && out.contains("0.38"));
    let o = logitprod(&["bench-effscore", "--data", &fixture("effscore_table.csv"), "--reference", "Nope"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn pipeline_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let out = dir.path().join(name);
        let o = logitprod(&[
            "pipeline",
            "--config",
            &fixture("pipeline.json"),
            "--out",
            out.to_str().unwrap(),
            "--mode",
            "learnable_sum",
        ]);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
        (fs::read(out.join("summary.json")).unwrap(), stdout(&o))
    };
    let (a, out_a) = run("a");
    let (b, out_b) = run("b");
    assert_eq!(a, b);
    assert_eq!(out_a, out_b);
    assert!(String::from_utf8_lossy(&a).contains("learnable_sum"));
}
