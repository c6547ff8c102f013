use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

const SLEEP: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/../core/data/sleepstudy.csv");
const SLEEP_COLS: [&str; 8] = ["--cluster", "Subject", "--response", "Reaction", "--fixed", "1,Days", "--random", "1,Days"];
const SIM_COLS: [&str; 10] =
    ["--cluster", "Subject", "--response", "Reaction", "--fixed", "1,Days", "--random", "1,Days", "--aux", "aux"];
const SMALL_NULL: [&str; 4] = ["--null-replications", "1000", "--null-grid", "200"];

fn snlmm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_snlmm")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = snlmm(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn simulate(dir: &TempDir, d: &str, seed: &str) -> PathBuf {
    let path = dir.path().join(format!("sim_{d}_{seed}.csv"));
    ok(&["simulate", "--subjects", "24", "--d", d, "--changed", "beta0", "--seed", seed, "--out", s(&path)]);
    path
}

#[test]
fn fit_sleepstudy() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("fit.json");
    ok(&[&["fit", "--data", SLEEP], &SLEEP_COLS[..], &["--out", s(&out)]].concat());
    let v = json(&out);
    assert_eq!(v["tool"], "snlmm");
    assert_eq!(v["version"], env!("CARGO_PKG_VERSION"));
    assert_eq!(v["config"]["cluster"], "Subject");
    let r = &v["result"];
    assert_eq!(r["converged"], true);
    assert_eq!(r["names"].as_array().unwrap().len(), 6);
    assert_eq!(r["n"], 180);
    let truth: Value = serde_json::from_str(include_str!("../../core/data/default_truth.json")).unwrap();
    for (a, b) in r["estimates"].as_array().unwrap().iter().zip(truth["values"].as_array().unwrap()) {
        let (a, b) = (a.as_f64().unwrap(), b.as_f64().unwrap());
        assert!((a - b).abs() <= 1e-4 * b.abs(), "{a} vs {b}");
    }
}

#[test]
fn fit_is_deterministic() {
    let run = || ok(&[&["fit", "--data", SLEEP], &SLEEP_COLS[..]].concat()).stdout;
    assert_eq!(run(), run());
}

#[test]
fn empty_csv_is_a_clean_error() {
    let dir = TempDir::new().unwrap();
    let empty = dir.path().join("empty.csv");
    std::fs::write(&empty, "").unwrap();
    let out = snlmm(&[&["fit", "--data", s(&empty)], &SLEEP_COLS[..]].concat());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
}

#[test]
fn usage_errors_exit_with_one() {
    assert_eq!(snlmm(&["fit", "--data", "/does/not/exist.csv", "--cluster", "a", "--response", "b", "--fixed", "1"]).status.code(), Some(1));
    assert_eq!(snlmm(&["fit", "--data", SLEEP]).status.code(), Some(1));
    assert_eq!(snlmm(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(snlmm(&["--help"]).status.code(), Some(0));
}

#[test]
fn config_file_overrides_flags() {
    let dir = TempDir::new().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"response": "Reaction", "alpha": 0.1}"#).unwrap();
    let out = dir.path().join("t.json");
    let args = [
        &["test", "--data", SLEEP, "--cluster", "Subject", "--response", "Days", "--fixed", "1,Days", "--random", "1,Days"][..],
        &["--aux", "Days", "--params", "Days", "--alpha", "0.05", "--config", s(&cfg), "--out", s(&out)],
        &SMALL_NULL,
    ]
    .concat();
    ok(&args);
    let v = json(&out);
    assert_eq!(v["config"]["alpha"], 0.1);
    assert_eq!(v["config"]["response"], "Reaction");
    assert_eq!(v["result"]["tests"][0]["critical_value"]["alpha"], 0.1);
}

#[test]
fn large_intercept_change_is_found_near_the_median() {
    let dir = TempDir::new().unwrap();
    // 16 asymptotic standard errors; see the README on the shift scale
    let data = simulate(&dir, "16", "3");
    let out = dir.path().join("t.json");
    ok(&[&["test", "--data", s(&data)], &SIM_COLS[..], &["--params", "(Intercept)", "--out", s(&out)], &SMALL_NULL].concat());
    let t = &json(&out)["result"]["tests"][0];
    assert_eq!(t["statistic"], "SN");
    assert!(t["value"].as_f64().unwrap() > t["critical_value"]["value"].as_f64().unwrap());
    // the change sits between the 12th and 13th of 24 subjects (10 rows each)
    let k = t["trace"]["argmax_k"].as_u64().unwrap() as i64;
    assert!((k - 120).abs() <= 30, "argmax at row {k}");
}

#[test]
fn null_dataset_stays_below_the_critical_value() {
    let dir = TempDir::new().unwrap();
    let data = simulate(&dir, "0", "3");
    let out = dir.path().join("t.json");
    ok(&[&["test", "--data", s(&data)], &SIM_COLS[..], &["--params", "(Intercept)", "--out", s(&out)], &SMALL_NULL].concat());
    let t = &json(&out)["result"]["tests"][0];
    assert!(t["value"].as_f64().unwrap() < t["critical_value"]["value"].as_f64().unwrap());
    let p = t["p_value"].as_f64().unwrap();
    assert!(p > 0.05 && p <= 1.0);
}

#[test]
fn trace_is_written_as_csv() {
    let dir = TempDir::new().unwrap();
    let data = simulate(&dir, "4", "5");
    let out = dir.path().join("trace.csv");
    ok(&[&["trace", "--data", s(&data)], &SIM_COLS[..], &["--params", "(Intercept)", "--stats", "SN", "--out", s(&out)], &SMALL_NULL].concat());
    let text = std::fs::read_to_string(&out).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("k,aux,value,critical_value"));
    // admissible split points 2..=238
    assert_eq!(lines.count(), 237);
}

#[test]
fn boundary_parameter_is_refused() {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("flat_slopes.csv");
    // identical slopes and residual pattern in every cluster: var(t) = 0
    let e = [0.3, -0.5, 0.1, 0.4, -0.2, -0.1];
    let a = [1.0, 3.5, -2.0, 0.7, 2.2, -1.1, 4.0, 0.0, -0.6, 1.9, 2.8, -3.0];
    let mut csv = String::from("g,t,y\n");
    for (j, aj) in a.iter().enumerate() {
        for (t, et) in e.iter().enumerate() {
            csv += &format!("g{j},{t},{}\n", 10.0 + aj + 2.0 * t as f64 + et);
        }
    }
    std::fs::write(&path, csv).unwrap();
    let cols = ["--cluster", "g", "--response", "y", "--fixed", "1,t", "--random", "1,t"];
    let fit = dir.path().join("fit.json");
    ok(&[&["fit", "--data", s(&path)], &cols[..], &["--out", s(&fit)]].concat());
    assert_eq!(json(&fit)["result"]["boundary"][4], true);

    let out = snlmm(&[&["test", "--data", s(&path)], &cols[..], &["--aux", "t", "--params", "var(t)"], &SMALL_NULL].concat());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("boundary"));
}

#[test]
fn critvals_reuse_the_cache() {
    let dir = TempDir::new().unwrap();
    let cache = dir.path().join("cache");
    let run = |name: &str| {
        let out = dir.path().join(name);
        ok(&["critvals", "--stats", "SN,CvM", "--replications", "1000", "--grid", "200", "--null-cache", s(&cache), "--out", s(&out)]);
        json(&out)
    };
    let first = run("a.json");
    assert_eq!(std::fs::read_dir(&cache).unwrap().count(), 2);
    assert_eq!(first, run("b.json"));
    let q = &first["result"][1]["quantiles"];
    assert_eq!(first["result"][1]["spec"]["kind"], "CvM");
    assert!(q.as_array().unwrap().len() == 3);
}

fn study(dir: &TempDir) -> PathBuf {
    let cfg = dir.path().join("study.json");
    std::fs::write(
        &cfg,
        r#"{"subjects": [24], "d": [0.0, 4.0, 8.0], "changed": ["beta0"], "tested": ["beta0", "beta1"],
            "statistics": ["SN", "CvM"], "replications": 12, "seed": 9, "null_grid": 200, "null_replications": 1000}"#,
    )
    .unwrap();
    cfg
}

#[test]
fn power_resumes_to_the_same_table() {
    let dir = TempDir::new().unwrap();
    let cfg = study(&dir);
    let whole = dir.path().join("whole.json");
    ok(&["power", "--config", s(&cfg), "--out", s(&whole)]);

    let ckpt = dir.path().join("ckpt");
    let resumed = dir.path().join("resumed.json");
    let csv = dir.path().join("resumed.csv");
    ok(&["power", "--config", s(&cfg), "--checkpoints", s(&ckpt), "--stop-after", "1", "--out", s(&resumed)]);
    assert!(!resumed.exists());
    assert_eq!(std::fs::read_dir(&ckpt).unwrap().count(), 1);
    let out = ok(&["power", "--config", s(&cfg), "--checkpoints", s(&ckpt), "--out", s(&resumed), "--csv", s(&csv)]);
    assert!(String::from_utf8_lossy(&out.stderr).contains("from checkpoint"));
    assert_eq!(json(&whole), json(&resumed));
    let header = std::fs::read_to_string(&csv).unwrap();
    assert!(header.starts_with("changed,tested,n,statistic,d=0,d=4,d=8"), "{header}");
}

#[test]
fn power_does_not_depend_on_thread_count() {
    let dir = TempDir::new().unwrap();
    let cfg = study(&dir);
    let one = dir.path().join("one.json");
    let eight = dir.path().join("eight.json");
    ok(&["power", "--config", s(&cfg), "--jobs", "1", "--out", s(&one)]);
    ok(&["power", "--config", s(&cfg), "--jobs", "8", "--out", s(&eight)]);
    assert_eq!(json(&one), json(&eight));
}
