use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn gapsvt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gapsvt")).args(args).env_remove("GAPSVT_SEED").output().expect("binary runs")
}

fn write(dir: &TempDir, name: &str, text: &str) -> PathBuf {
    let path = dir.path().join(name);
    std::fs::write(&path, text).unwrap();
    path
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

const SVT_WORKLOAD: &str = r#"{"pairs": [[5, 5], [3, 3], [7, 7]], "threshold": 4, "k": 2, "epsilon": 1}"#;

#[test]
fn injected_tape_gives_the_zero_noise_trace() {
    let dir = TempDir::new().unwrap();
    let w = write(&dir, "w.json", SVT_WORKLOAD);
    let t = write(&dir, "t.json", r#"{"threshold_noise": 0, "per_query": [0, 0, 0]}"#);
    let out = gapsvt(&["run", "--mechanism", "svt-gap", "--workload", s(&w), "--tape", s(&t)]);
    assert!(out.status.success(), "{}", stderr(&out));
    let record: Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(
        record["answers"],
        serde_json::json!([{"gap": 1.0, "branch": "plain"}, {"bot": true}, {"gap": 3.0, "branch": "plain"}])
    );
    assert_eq!(record["consumed"], 4);

    let text = gapsvt(&["run", "--mechanism", "svt-gap", "--workload", s(&w), "--tape", s(&t), "--format", "text"]);
    assert_eq!(stdout(&text), "svt-gap side=d: ⊤(1) ⊥ ⊤(3)\n");
    let classic = gapsvt(&["run", "--mechanism", "svt", "--workload", s(&w), "--tape", s(&t), "--format", "text"]);
    assert_eq!(stdout(&classic), "svt side=d: ⊤ ⊥ ⊤\n");
}

#[test]
fn same_seed_is_byte_identical() {
    let dir = TempDir::new().unwrap();
    let w = write(&dir, "w.json", SVT_WORKLOAD);
    let args = ["run", "--mechanism", "svt-gap", "--workload", s(&w), "--seed", "42", "--runs", "20"];
    let (a, b) = (gapsvt(&args), gapsvt(&args));
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    let other = gapsvt(&["run", "--mechanism", "svt-gap", "--workload", s(&w), "--seed", "43", "--runs", "20"]);
    assert_ne!(a.stdout, other.stdout);
}

#[test]
fn many_runs_respect_k_and_replay() {
    let dir = TempDir::new().unwrap();
    let w = write(&dir, "w.json", SVT_WORKLOAD);
    let out = gapsvt(&["run", "--mechanism", "svt-gap", "--workload", s(&w), "--seed", "1", "--runs", "1000"]);
    assert!(out.status.success());
    let text = stdout(&out);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 1000);
    for line in &lines {
        let r: Value = serde_json::from_str(line).unwrap();
        let gaps = r["answers"].as_array().unwrap().iter().filter(|a| a.get("gap").is_some()).count();
        assert!(gaps <= 2);
    }
    // Record r carries seed 1 + r and replays on its own.
    let r: Value = serde_json::from_str(lines[17]).unwrap();
    assert_eq!(r["seed"], 18);
    let again = gapsvt(&["run", "--mechanism", "svt-gap", "--workload", s(&w), "--seed", "18"]);
    assert_eq!(stdout(&again).trim_end(), lines[17]);
}

#[test]
fn seed_comes_from_the_environment() {
    let dir = TempDir::new().unwrap();
    let w = write(&dir, "w.json", SVT_WORKLOAD);
    let flag = gapsvt(&["run", "--mechanism", "svt", "--workload", s(&w), "--seed", "9"]);
    let env = Command::new(env!("CARGO_BIN_EXE_gapsvt"))
        .args(["run", "--mechanism", "svt", "--workload", s(&w)])
        .env("GAPSVT_SEED", "9")
        .output()
        .unwrap();
    assert!(env.status.success());
    assert_eq!(flag.stdout, env.stdout);
    let missing = gapsvt(&["run", "--mechanism", "svt", "--workload", s(&w)]);
    assert_eq!(missing.status.code(), Some(2));
}

#[test]
fn adaptive_records_carry_the_ledger() {
    let dir = TempDir::new().unwrap();
    let w = write(&dir, "w.json", r#"{"pairs": [[0, 0], [0, 0]], "threshold": 4, "k": 1, "epsilon": 1, "sigma": 2}"#);
    let t = write(&dir, "t.json", r#"{"threshold_noise": 0, "per_query": [[0, 0], [0, 0]]}"#);
    let out = gapsvt(&["run", "--mechanism", "adaptive-gap", "--workload", s(&w), "--tape", s(&t)]);
    let r: Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(r["answers"], serde_json::json!([{"bot": true, "gap": 0.0}, {"bot": true, "gap": 0.0}]));
    assert_eq!(r["ledger"]["cost"], 0.5);
    assert_eq!(r["consumed"], 5);
}

#[test]
fn malformed_workloads_exit_2_naming_the_field() {
    let dir = TempDir::new().unwrap();
    let cases = [
        (r#"{"pairs": [[1, 1], [4, 2]], "threshold": 0, "k": 1, "epsilon": 1}"#, "pairs[1]"),
        (r#"{"pairs": [[1, 1]], "threshold": 0, "k": 1, "epsilon": -1}"#, "epsilon"),
        (r#"{"pairs": [[1, 1]], "threshold": 0, "k": 0, "epsilon": 1}"#, "k"),
        (r#"{"pairs": [], "threshold": 0, "k": 1, "epsilon": 1}"#, "pairs"),
        (r#"{"pairs": [[1, 1]], "threshold": 0, "k": 1, "epsilon": 1, "extra": 1}"#, "extra"),
        (r#"{"pairs": [[1, 1]], "threshold": 0, "k": 1, "epsilon": 1, "noise": "gauss"}"#, "gauss"),
    ];
    for (text, needle) in cases {
        let w = write(&dir, "w.json", text);
        let out = gapsvt(&["run", "--mechanism", "svt", "--workload", s(&w), "--seed", "1"]);
        assert_eq!(out.status.code(), Some(2), "{text}");
        assert!(stderr(&out).contains(needle), "{text}: {}", stderr(&out));
    }
    let w = write(&dir, "w.json", SVT_WORKLOAD);
    let out = gapsvt(&["run", "--mechanism", "adaptive-gap", "--workload", s(&w), "--seed", "1"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("sigma"));
}

#[test]
fn budget_table() {
    let out = gapsvt(&["budget", "--epsilon", "1", "--k", "1", "--mechanism", "svt-gap"]);
    assert_eq!(stdout(&out), "ε0=0.5 ε1=0.25; ε0+2kε1=1\n");
    let out = gapsvt(&["budget", "--epsilon", "1", "--k", "1", "--mechanism", "adaptive-gap"]);
    assert_eq!(stdout(&out), "ε0=0.5 ε1=0.125 ε2=0.25; ε0+2kε2=1\n");
    let out = gapsvt(&["budget", "--epsilon", "0", "--k", "1", "--mechanism", "svt"]);
    assert_eq!(out.status.code(), Some(2));
    let out = gapsvt(&["budget", "--epsilon", "1", "--k", "0", "--mechanism", "svt"]);
    assert_eq!(out.status.code(), Some(2));
}

fn reports(out: &Output) -> Vec<Value> {
    stdout(out).lines().map(|l| serde_json::from_str(l).unwrap()).collect()
}

#[test]
fn verify_trial_suites_pass() {
    let out = gapsvt(&["verify", "--suite", "all", "--mechanism", "svt-gap", "--trials", "2000", "--seed", "7"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let rs = reports(&out);
    let suites: Vec<&str> = rs.iter().map(|r| r["suite"].as_str().unwrap()).collect();
    assert_eq!(suites, ["align", "cost", "structural"]);
    assert!(rs.iter().all(|r| r["verdict"] == "pass"));
    assert_eq!(rs[1]["max_cost"], 1.0);
}

#[test]
fn injected_mutation_exits_1_with_a_witness() {
    for (mechanism, mutation) in
        [("svt-gap", "threshold-shift=2"), ("svt-gap", "branch-shift=2"), ("adaptive-gap", "missing-j-term")]
    {
        let out = gapsvt(&[
            "verify",
            "--suite",
            "align",
            "--mechanism",
            mechanism,
            "--trials",
            "1000",
            "--seed",
            "7",
            "--inject-mutation",
            mutation,
        ]);
        assert_eq!(out.status.code(), Some(1), "{mutation}");
        let r = &reports(&out)[0];
        assert_eq!(r["verdict"], "fail");
        assert!(r["witness"]["tape"].is_object());
        assert!(r["witness"]["aligned_tape"].is_object());
    }
    let out = gapsvt(&["verify", "--suite", "align", "--seed", "1", "--inject-mutation", "sideways"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn exact_suite_on_a_small_workload() {
    let dir = TempDir::new().unwrap();
    let w = write(
        &dir,
        "w.json",
        r#"{"pairs": [[10, 9], [9, 10]], "threshold": 10, "k": 1, "epsilon": 1, "noise": "dlap"}"#,
    );
    let out = gapsvt(&["verify", "--suite", "dp-exact", "--mechanism", "svt", "--seed", "1", "--workload", s(&w)]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let r = &reports(&out)[0];
    assert!(r["max_log_ratio"].as_f64().unwrap() <= 1.0 + 1e-9);
    assert!(r["truncation_loss"].as_f64().unwrap() < 1e-9);

    let small = gapsvt(&[
        "verify",
        "--suite",
        "dp-exact",
        "--mechanism",
        "svt",
        "--seed",
        "1",
        "--workload",
        s(&w),
        "--grid-budget",
        "1000",
    ]);
    assert_eq!(small.status.code(), Some(2));
    assert!(stderr(&small).contains("--grid-budget"));

    let real = write(&dir, "r.json", r#"{"pairs": [[10.5, 9.5]], "threshold": 10, "k": 1, "epsilon": 1}"#);
    let out = gapsvt(&["verify", "--suite", "dp-exact", "--mechanism", "svt", "--seed", "1", "--workload", s(&real)]);
    assert_eq!(out.status.code(), Some(2));
    let out = gapsvt(&["verify", "--suite", "dp-exact", "--mechanism", "svt", "--seed", "1"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn sampling_suite_reports_a_heuristic() {
    let dir = TempDir::new().unwrap();
    let w = write(
        &dir,
        "w.json",
        r#"{"pairs": [[10, 9], [9, 10]], "threshold": 10, "k": 1, "epsilon": 1, "noise": "dlap"}"#,
    );
    let out = gapsvt(&[
        "verify",
        "--suite",
        "dp-mc",
        "--mechanism",
        "svt",
        "--seed",
        "3",
        "--workload",
        s(&w),
        "--samples",
        "100000",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let r = &reports(&out)[0];
    assert_eq!(r["suite"], "dp-mc");
    assert!(r["notes"][0].as_str().unwrap().contains("falsification heuristic"));
}

#[test]
fn counting_workload_runs() {
    let dir = TempDir::new().unwrap();
    let w = write(
        &dir,
        "w.json",
        r#"{"counting": {"rows": [{"age": 41}, {"age": 29}, {"age": 63}], "remove": 0,
            "queries": [{"column": "age", "op": "ge", "value": 40}, {"column": "age", "op": "lt", "value": 30}]},
            "threshold": 1, "k": 1, "epsilon": 1}"#,
    );
    let t = write(&dir, "t.json", r#"{"threshold_noise": 0, "per_query": [0, 0]}"#);
    let d = gapsvt(&["run", "--mechanism", "svt-gap", "--workload", s(&w), "--tape", s(&t), "--format", "text"]);
    assert_eq!(stdout(&d), "svt-gap side=d: ⊤(1)\n", "{}", stderr(&d));
    let dp = gapsvt(&[
        "run",
        "--mechanism",
        "svt-gap",
        "--workload",
        s(&w),
        "--tape",
        s(&t),
        "--side",
        "dprime",
        "--format",
        "text",
    ]);
    assert_eq!(stdout(&dp), "svt-gap side=dprime: ⊤(0)\n");
}
