use std::path::Path;
use std::process::{Command, Output};

use celltraffic::rnn::TrainedModel;

fn cli(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_celltraffic"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("run celltraffic")
}

fn read(p: impl AsRef<Path>) -> String {
    std::fs::read_to_string(p).unwrap()
}

#[test]
fn help_exits_zero() {
    let tmp = tempfile::tempdir().unwrap();
    let out = cli(&["--help"], tmp.path());
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8_lossy(&out.stdout);
    for sub in ["ingest", "cluster", "train", "compare", "predict"] {
        assert!(text.contains(sub), "{sub} missing from usage");
    }
    assert_eq!(cli(&["ingest", "--help"], tmp.path()).status.code(), Some(0));
}

#[test]
fn missing_input_exits_two_with_one_line() {
    let tmp = tempfile::tempdir().unwrap();
    let out = cli(
        &["ingest", "--input", "logs/", "--span", "2013-11-01..2014-01-02", "--out", "bins.json"],
        tmp.path(),
    );
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(String::from_utf8_lossy(&out.stderr).trim().lines().count(), 1);
    assert!(!tmp.path().join("bins.json").exists());
}

#[test]
fn zero_k_exits_two() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(tmp.path().join("bins.json"), "{}").unwrap();
    let out = cli(&["cluster", "--bins", "bins.json", "--k", "0"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn invalid_config_writes_nothing() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = r#"{"inputs": ["x"], "span": "2013-11-01..2013-11-02", "bogus": true, "output_dir": "out"}"#;
    std::fs::write(tmp.path().join("cfg.json"), cfg).unwrap();
    let out = cli(&["run", "--config", "cfg.json"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(!tmp.path().join("out").exists());
}

/// synth -> ingest -> cluster -> train -> compare -> predict, stage by stage.
#[test]
fn staged_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let ok = |out: Output| {
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        out
    };
    ok(cli(
        &["synth", "--out-dir", "cdr", "--archetypes", "3", "--cells", "4", "--seed", "2"],
        d,
    ));
    let ingest_args = ["ingest", "--input", "cdr", "--span", "2013-11-01..2014-01-02", "--out", "bins.json"];
    ok(cli(&ingest_args, d));
    let first = read(d.join("bins.json"));
    let doc: serde_json::Value = serde_json::from_str(&first).unwrap();
    let cells = doc["cells"].as_object().unwrap();
    assert_eq!(cells.len(), 12);
    assert!(cells.values().all(|v| v.as_array().unwrap().len() == 2976));
    // idempotent, and the inputs are left alone
    let truth_before = read(d.join("cdr/truth.csv"));
    ok(cli(&ingest_args, d));
    assert_eq!(read(d.join("bins.json")), first);
    assert_eq!(read(d.join("cdr/truth.csv")), truth_before);

    let out = ok(cli(
        &["cluster", "--bins", "bins.json", "--k", "auto", "--kmax", "8", "--truth", "cdr/truth.csv"],
        d,
    ));
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("k,sse\n"));
    assert!(String::from_utf8_lossy(&out.stderr).contains("adjusted Rand index"));
    assert_eq!(read(d.join("sse.csv")).lines().count(), 9);
    ok(cli(&["cluster", "--bins", "bins.json", "--k", "3"], d));

    ok(cli(
        &["train", "--clusters", "clusters.json", "--layers", "1", "--units", "4", "--runs", "2", "--epochs", "2"],
        d,
    ));
    let results = read(d.join("results.csv"));
    assert_eq!(results.lines().count(), 1 + 3 * 2 * 2);
    let summary: serde_json::Value = serde_json::from_str(&read(d.join("summary.json"))).unwrap();
    assert_eq!(summary.as_object().unwrap().len(), 3);

    let out = ok(cli(&["compare", "--results", "results.csv", "--clusters", "1..3"], d));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let report = report.as_array().unwrap();
    assert_eq!(report.len(), 3);
    for r in report {
        assert!(["different", "similar"].contains(&r["verdict"].as_str().unwrap()));
        assert_eq!(r["df"], 1);
    }
    assert_eq!(cli(&["compare", "--results", "results.csv", "--clusters", "1..5"], d).status.code(), Some(2));

    ok(cli(&["predict", "--model", "models/lstm_c2.json", "--bins", "bins.json", "--out", "pred.csv"], d));
    let model = TrainedModel::from_json(&read(d.join("models/lstm_c2.json"))).unwrap();
    let mut rdr = csv::Reader::from_path(d.join("pred.csv")).unwrap();
    assert_eq!(rdr.headers().unwrap(), vec!["timestamp", "truth", "prediction"]);
    let rows: Vec<(i64, f64, f64)> = rdr.deserialize().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 596 - 4);
    let mse: f64 = rows.iter().map(|(_, y, p)| (p - y) * (p - y)).sum::<f64>() / rows.len() as f64;
    assert!((mse.sqrt() - model.test_rmse.unwrap()).abs() <= 1e-9);
    assert!(rows.windows(2).all(|w| w[1].0 - w[0].0 == 30 * 60 * 1000));
}
