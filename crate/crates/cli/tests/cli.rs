use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_soc-pinn"));
    c.env("SOC_PINN_THREADS", "2");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn files(dir: &Path, ext: &str) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == ext))
        .collect();
    v.sort();
    v
}

/// Short random-load cycles, quick enough to train on in a test.
fn small_dataset(dir: &Path, count: usize) -> PathBuf {
    let spec = dir.join("spec.json");
    fs::write(
        &spec,
        r#"{"id": "cell", "profile": {"kind": "random", "duration_s": 900}}"#,
    )
    .unwrap();
    let out = dir.join("data");
    ok(&["synth", "--config", s(&spec), "--count", &count.to_string(), "--seed", "3", "--out", s(&out)]);
    out
}

#[test]
fn synth_writes_one_cycle_and_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    ok(&["synth", "--count", "1", "--seed", "7", "--out", s(&a)]);
    ok(&["synth", "--count", "1", "--seed", "7", "--out", s(&b)]);
    let csv = files(&a, "csv");
    assert_eq!(csv.len(), 1);
    let json: Vec<_> = files(&a, "json").into_iter().filter(|p| !p.ends_with("manifest.json")).collect();
    assert_eq!(json.len(), 1);
    assert_eq!(fs::read(&csv[0]).unwrap(), fs::read(b.join(csv[0].file_name().unwrap())).unwrap());
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(a.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["subcommand"], "synth");
    assert_eq!(manifest["seeds"][0], 7);
}

#[test]
fn synth_zero_count_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("none");
    let r = run(&["synth", "--count", "0", "--out", s(&out)]);
    assert_eq!(r.status.code(), Some(2));
    assert!(!out.exists());
}

#[test]
fn ingest_reports_partial_failure() {
    let tmp = tempfile::tempdir().unwrap();
    let good = tmp.path().join("good.csv");
    let bad = tmp.path().join("bad.csv");
    let mut body = String::from("Time [s],Voltage [V],Current [A],Temperature [degC],Capacity [Ah]\n");
    for k in 0..20 {
        body.push_str(&format!("{},3.9,-3,25,{}\n", k * 10, -3.0 * (k * 10) as f64 / 3600.0));
    }
    fs::write(&good, body).unwrap();
    fs::write(&bad, "Time [s],Voltage [V]\n0,3.9\n").unwrap();
    let out = tmp.path().join("lg");
    let r = run(&["ingest", s(&good), s(&bad), "--schema", "lg", "--out", s(&out)]);
    assert_eq!(r.status.code(), Some(3));
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["cycles"].as_array().unwrap().len(), 1);
    assert_eq!(summary["failures"].as_array().unwrap().len(), 1);
    let meta: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("good.json")).unwrap()).unwrap();
    assert_eq!(meta["c_rated_ah"], 3.0);
    assert_eq!(meta["c_rate_discharge"], -1.0);

    let only_good = tmp.path().join("lg2");
    ok(&["ingest", s(&good), "--schema", "lg", "--moving-average", "30", "--out", s(&only_good)]);
    assert_eq!(files(&only_good, "csv").len(), 1);
}

#[test]
fn train_missing_dataset_fails() {
    let tmp = tempfile::tempdir().unwrap();
    let r = run(&["train", "--dataset", s(&tmp.path().join("nope")), "--out", s(&tmp.path().join("o"))]);
    assert!(!r.status.success());
}

#[test]
fn train_rejects_bad_physics_flag() {
    let tmp = tempfile::tempdir().unwrap();
    let data = small_dataset(tmp.path(), 1);
    let r = run(&["train", "--dataset", s(&data), "--physics", "sometimes", "--out", s(&tmp.path().join("o"))]);
    assert_eq!(r.status.code(), Some(2));
}

#[test]
fn train_eval_rollout_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let data = small_dataset(tmp.path(), 4);
    let cfg = tmp.path().join("train.json");
    fs::write(&cfg, r#"{"epochs": 3, "data_horizon_s": 30}"#).unwrap();
    let pinn = tmp.path().join("pinn");
    let nopinn = tmp.path().join("nopinn");
    ok(&["train", "--dataset", s(&data), "--config", s(&cfg), "--horizons", "30,60", "--seeds", "2", "--out", s(&pinn)]);
    ok(&["train", "--dataset", s(&data), "--config", s(&cfg), "--physics", "off", "--horizons", "30,60", "--out", s(&nopinn)]);
    for seed in ["seed-0", "seed-1"] {
        for f in ["checkpoint.json", "history.csv", "config.json"] {
            assert!(pinn.join(seed).join(f).is_file(), "{seed}/{f}");
        }
    }
    assert!(pinn.join("aggregate.json").is_file());
    let cfg_off: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(nopinn.join("config.json")).unwrap()).unwrap();
    assert_eq!(cfg_off["physics_mode"], "off");

    let out = tmp.path().join("reports");
    ok(&[
        "eval", "--checkpoint", s(&pinn), "--checkpoint", &format!("No-PINN={}", s(&nopinn)),
        "--dataset", s(&data), "--horizons", "30,60",
        "--modes", "cascaded,teacher-forced,branch1-only", "--out", s(&out),
    ]);
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("eval/report.json")).unwrap()).unwrap();
    let rows = report["rows"].as_array().unwrap();
    // 3 models x (2 horizons x 2 modes + 1 branch-1 row per horizon) + Physics-Only per horizon and mode
    let learned = rows.iter().filter(|r| r["config"] != "Physics-Only").count();
    assert_eq!(learned, 3 * 2 * 3);
    let physics = rows.iter().filter(|r| r["config"] == "Physics-Only").count();
    assert_eq!(physics, 2 * 2);
    assert!(rows.iter().all(|r| r["mae"].as_f64().unwrap().is_finite()));
    assert_eq!(report["cost"]["total_params"], 2322);
    assert!(out.join("eval/report.csv").is_file());
    assert!(out.join("eval/manifest.json").is_file());

    let roll = tmp.path().join("roll");
    ok(&["rollout", "--dataset", s(&data), "--horizon", "30", "--mode", "physics-only", "--out", s(&roll)]);
    let dir = roll.join("rollout");
    assert_eq!(files(&dir, "csv").len(), 4);
    for j in files(&dir, "json").iter().filter(|p| !p.ends_with("manifest.json")) {
        let r: serde_json::Value = serde_json::from_str(&fs::read_to_string(j).unwrap()).unwrap();
        assert!(r["final_error"].as_f64().unwrap() < 0.05);
    }
    let ckpt = pinn.join("seed-0/checkpoint.json");
    ok(&["rollout", "--checkpoint", s(&ckpt), "--dataset", s(&data), "--cycle", "cell_001", "--horizon", "60", "--out", s(&roll), "--run-id", "pinn"]);
    assert_eq!(files(&roll.join("pinn"), "csv").len(), 1);
    let r = run(&["rollout", "--dataset", s(&data), "--horizon", "30", "--out", s(&roll), "--run-id", "x"]);
    assert_eq!(r.status.code(), Some(2), "pinn rollout without a checkpoint");
}

#[test]
fn physics_only_rollout_on_constant_load_is_exact() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = tmp.path().join("spec.json");
    fs::write(
        &spec,
        r#"{"id": "cc", "initial_soc": 1.0, "noise": {},
            "profile": {"kind": "segments", "segments": [{"duration_s": 1800, "current_a": -3}]}}"#,
    )
    .unwrap();
    let data = tmp.path().join("data");
    ok(&["synth", "--config", s(&spec), "--out", s(&data)]);
    let out = tmp.path().join("roll");
    ok(&["rollout", "--dataset", s(&data), "--horizon", "60", "--mode", "physics-only", "--out", s(&out)]);
    let j = files(&out.join("rollout"), "json").into_iter().find(|p| !p.ends_with("manifest.json")).unwrap();
    let r: serde_json::Value = serde_json::from_str(&fs::read_to_string(j).unwrap()).unwrap();
    assert!(r["final_error"].as_f64().unwrap() < 1e-6);
}

#[test]
fn train_and_eval_are_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let data = small_dataset(tmp.path(), 2);
    let mut reports = Vec::new();
    let mut ckpts = Vec::new();
    for run_id in ["a", "b"] {
        let out = tmp.path().join(run_id);
        ok(&["train", "--dataset", s(&data), "--epochs", "2", "--seed", "5", "--out", s(&out)]);
        ok(&["eval", "--checkpoint", s(&out), "--dataset", s(&data), "--horizons", "10,20", "--out", s(&out), "--run-id", "ev"]);
        ckpts.push(fs::read(out.join("checkpoint.json")).unwrap());
        reports.push(fs::read(out.join("ev/report.json")).unwrap());
    }
    assert_eq!(ckpts[0], ckpts[1]);
    assert_eq!(reports[0], reports[1]);
}

#[test]
fn gradcheck_passes_and_fails_on_tolerance() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("gc");
    ok(&["gradcheck", "--trials", "5", "--out", s(&out)]);
    let results: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("gradcheck.json")).unwrap()).unwrap();
    assert_eq!(results.as_array().unwrap().len(), 2);
    let r = run(&["gradcheck", "--trials", "2", "--tolerance", "0", "--out", s(&out)]);
    assert_eq!(r.status.code(), Some(1));
}
