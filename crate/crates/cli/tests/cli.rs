use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use plume_dd::scenario::ingest_csv;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_plume-dd"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

struct Fixture {
    _tmp: tempfile::TempDir,
    root: PathBuf,
    scenario: PathBuf,
    train_cfg: PathBuf,
}

fn write_json(path: &Path, v: serde_json::Value) {
    fs::write(path, serde_json::to_vec_pretty(&v).unwrap()).unwrap();
}

/// A small scenario and a quick training config shared by the tests.
fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let tmp = tempfile::tempdir().unwrap();
        let root = tmp.path().to_path_buf();
        let scen_cfg = root.join("scenario.json");
        write_json(&scen_cfg, serde_json::json!({"hours": 72, "receptors_per_subdomain": 8}));
        let scenario = root.join("scn");
        let o = run(&["generate", "--preset", "paper-mini", "--config", p(&scen_cfg), "--seed", "7", "--out", p(&scenario)]);
        assert!(o.status.success(), "{}", stderr(&o));
        let train_cfg = root.join("train.json");
        write_json(
            &train_cfg,
            serde_json::json!({"hidden": [16, 16], "epochs": 4, "iterations": 3, "n_b": 3, "t_eval": 8, "batch_size": 32, "adam": {"step_size": 0.005}}),
        );
        Fixture { _tmp: tmp, root, scenario, train_cfg }
    })
}

fn trained_run(name: &str, extra: &[&str]) -> PathBuf {
    let f = fixture();
    let out = f.root.join(name);
    if !out.join("metrics.csv").exists() {
        let mut args = vec!["train", "--scenario", p(&f.scenario), "--out", p(&out), "--config", p(&f.train_cfg)];
        args.extend_from_slice(extra);
        let o = run(&args);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    out
}

#[test]
fn usage_errors_exit_one() {
    let o = run(&["generate", "--preset", "paper-mini"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("--out"));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(run(&["--help"]).status.code(), Some(0));
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["generate", "--preset", "paper-huge", "--out", p(dir.path())]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn config_errors_name_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    write_json(&cfg, serde_json::json!({"receptor_count": 3}));
    let o = run(&["generate", "--config", p(&cfg), "--out", p(&dir.path().join("s"))]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("receptor_count"), "{}", stderr(&o));
    write_json(&cfg, serde_json::json!({"gx": 0}));
    let o = run(&["generate", "--config", p(&cfg), "--out", p(&dir.path().join("s"))]);
    assert_eq!(o.status.code(), Some(1));
    assert!(!dir.path().join("s").exists());
}

#[test]
fn generate_is_deterministic() {
    let f = fixture();
    let scen_cfg = f.root.join("scenario.json");
    let again = f.root.join("scn_again");
    let o = run(&["generate", "--config", p(&scen_cfg), "--seed", "7", "--out", p(&again)]);
    assert!(o.status.success());
    for name in ["scenario.json", "sources.csv", "receptors.csv", "traffic.csv", "weather.csv", "labels.csv"] {
        assert_eq!(fs::read(f.scenario.join(name)).unwrap(), fs::read(again.join(name)).unwrap(), "{name}");
    }
}

#[test]
fn train_sweep_writes_one_directory_per_value() {
    let f = fixture();
    let out = f.root.join("sweep");
    let o = run(&[
        "train", "--scenario", p(&f.scenario), "--out", p(&out), "--config", p(&f.train_cfg), "--iterations", "1",
        "--epochs", "1", "--kappa", "0.3", "--kappa", "0.5", "--pollutant", "NO2",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    for k in ["0.3", "0.5"] {
        let d = out.join(format!("lambda1_kappa{k}"));
        assert!(d.join("metrics.csv").exists());
        assert!(d.join("summary.json").exists());
        assert!(d.join("checkpoints").join("NO2_sub0.json").exists());
        let summary: serde_json::Value = serde_json::from_slice(&fs::read(d.join("summary.json")).unwrap()).unwrap();
        assert_eq!(summary["config"]["dd"]["kappa"], k.parse::<f64>().unwrap());
        assert_eq!(summary["config"]["dd"]["epochs"], 1);
    }
}

#[test]
fn train_rejects_bad_settings_before_work() {
    let f = fixture();
    let out = f.root.join("never");
    let o = run(&["train", "--scenario", p(&f.scenario), "--out", p(&out), "--iterations", "0"]);
    assert_eq!(o.status.code(), Some(1));
    let o = run(&["train", "--scenario", p(&f.scenario), "--out", p(&out), "--lambda", "-1"]);
    assert_eq!(o.status.code(), Some(1));
    let o = run(&["train", "--scenario", p(&f.scenario), "--out", p(&out), "--pollutant", "SO2"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(!out.exists());
    let o = run(&["train", "--scenario", p(&f.root.join("missing")), "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn evaluate_single_and_pair() {
    let a = trained_run("coupled", &[]);
    let b = trained_run("decoupled", &["--lambda", "0"]);
    let o = run(&["evaluate", p(&a)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("interval width"));
    assert!(!stdout(&o).contains("discontinuity ratio"));

    let report = fixture().root.join("report.json");
    let o = run(&["evaluate", p(&a), p(&b), "--burn-in", "2", "--out", p(&report)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("discontinuity ratio"));
    let r: serde_json::Value = serde_json::from_slice(&fs::read(&report).unwrap()).unwrap();
    assert!(r["discontinuity_ratio"]["NO2"].as_f64().unwrap() > 0.0);

    let o = run(&["evaluate", p(&a), p(&b), "--burn-in", "9"]);
    assert_eq!(o.status.code(), Some(1));
    let o = run(&["evaluate", p(&fixture().root.join("nope"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("does not exist"));
}

#[test]
fn predict_matches_labels_and_flags_bad_rows() {
    let f = fixture();
    let run_dir = trained_run("coupled", &[]);
    let scn = ingest_csv(&f.scenario).unwrap();
    let queries = f.root.join("queries.csv");
    let mut text = String::from("x,y,timestamp\n");
    let mut truth = Vec::new();
    for k in 0..40 {
        let (m, i, t) = (k % 2, (k * 3) % 8, (k * 7) % 72);
        let r = scn.subdomains[m].receptors[i];
        text += &format!("{},{},{}\n", r.x, r.y, scn.timestamps[t]);
        truth.push(scn.labels[0][m][[t, i]]);
    }
    text += &format!("-50,10,{}\n", scn.timestamps[0]);
    fs::write(&queries, text).unwrap();

    let out = f.root.join("pred.csv");
    let o = run(&["predict", "--run", p(&run_dir), "--inputs", p(&f.scenario), "--queries", p(&queries), "--out", p(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stderr(&o).contains("rows/s"));
    let mut rdr = csv::Reader::from_path(&out).unwrap();
    assert_eq!(rdr.headers().unwrap().iter().collect::<Vec<_>>(), ["x", "y", "timestamp", "conc_ug_m3", "error"]);
    let rows: Vec<csv::StringRecord> = rdr.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 41);
    assert!(rows[40][3].is_empty() && rows[40][4].contains("outside"));
    let pred: Vec<f64> = rows[..40].iter().map(|r| r[3].parse().unwrap()).collect();
    let err = pred.iter().zip(&truth).map(|(a, b)| (a - b).abs()).sum::<f64>() / 40.0;

    let summary: serde_json::Value = serde_json::from_slice(&fs::read(run_dir.join("summary.json")).unwrap()).unwrap();
    let no2 = summary["final_metrics"].as_array().unwrap().iter().find(|m| m["pollutant"] == "NO2").unwrap();
    let test_mae = no2["test_mae"].as_f64().unwrap();
    let baseline = no2["baseline_mae"].as_f64().unwrap();
    assert!(err <= 2.0 * test_mae, "query error {err} vs test MAE {test_mae}");
    assert!(err < baseline, "query error {err} vs baseline {baseline}");

    let bg = f.root.join("pred_bg.csv");
    let o = run(&["predict", "--run", p(&run_dir), "--inputs", p(&f.scenario), "--queries", p(&queries), "--out", p(&bg), "--background"]);
    assert!(o.status.success());
    let with_bg: Vec<f64> = csv::Reader::from_path(&bg).unwrap().records().take(40).map(|r| r.unwrap()[3].parse().unwrap()).collect();
    for (a, b) in with_bg.iter().zip(&pred) {
        assert!((a - b - scn.pollutants()[0].background).abs() < 1e-9);
    }

    let o = run(&["predict", "--run", p(&run_dir), "--inputs", p(&f.scenario), "--queries", p(&queries), "--out", p(&out), "--strict"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn bench_report_and_usage() {
    let f = fixture();
    let run_dir = trained_run("coupled", &[]);
    let o = run(&["bench", "--scenario", p(&f.scenario), "--run", p(&run_dir), "--queries", "0"]);
    assert_eq!(o.status.code(), Some(1));

    let out_a = f.root.join("bench_a.json");
    let out_b = f.root.join("bench_b.json");
    for out in [&out_a, &out_b] {
        let o = bin()
            .args(["bench", "--scenario", p(&f.scenario), "--run", p(&run_dir), "--queries", "300", "--reps", "5", "--out", p(out)])
            .env("BENCH_NOTE", "1 core test box")
            .output()
            .unwrap();
        assert!(o.status.success(), "{}", stderr(&o));
        assert!(stdout(&o).contains("1 core test box"));
    }
    let a: serde_json::Value = serde_json::from_slice(&fs::read(&out_a).unwrap()).unwrap();
    let b: serde_json::Value = serde_json::from_slice(&fs::read(&out_b).unwrap()).unwrap();
    assert_eq!(a["note"], "1 core test box");
    assert_eq!(a["query_set_sha256"], b["query_set_sha256"]);
    assert!(a["speedup"].as_f64().unwrap() > 0.0);
    assert_eq!(a["solver_seconds"].as_array().unwrap().len(), 5);
}

#[test]
fn thread_count_does_not_change_results() {
    let f = fixture();
    let one = f.root.join("threads1");
    let two = f.root.join("threads2");
    for (dir, n) in [(&one, "1"), (&two, "3")] {
        let o = run(&[
            "--threads", n, "train", "--scenario", p(&f.scenario), "--out", p(dir), "--config", p(&f.train_cfg),
            "--iterations", "1", "--epochs", "1", "--run-id", "threads",
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    assert_eq!(fs::read(one.join("metrics.csv")).unwrap(), fs::read(two.join("metrics.csv")).unwrap());
    assert_eq!(
        fs::read(one.join("checkpoints/PM10_sub1.json")).unwrap(),
        fs::read(two.join("checkpoints/PM10_sub1.json")).unwrap()
    );
}
