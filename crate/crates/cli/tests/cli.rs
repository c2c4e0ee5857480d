use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn cpbo(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cpbo"))
        .args(args)
        .output()
        .expect("binary runs")
}

const SMALL: &[&str] = &[
    "--scale",
    "desk",
    "--iterations",
    "5",
    "--n-init",
    "3",
    "--training-iterations",
    "100",
    "--metric-pairs",
    "200",
];

fn args<'a>(head: &[&'a str], out: &'a str) -> Vec<&'a str> {
    let mut v = head.to_vec();
    v.extend_from_slice(SMALL);
    v.extend_from_slice(&["--out", out]);
    v
}

#[test]
fn run_writes_json_and_csv() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().to_str().unwrap();
    let o = cpbo(&args(&["run", "--seed", "3"], out));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(tmp.path().join("results.csv")).unwrap();
    let header = csv.lines().next().unwrap();
    assert_eq!(
        header,
        "benchmark,strategy,gamma_true,seed,iteration,cumulative_cost,simple_regret,\
         inference_regret,ordinal_acc,choice_acc,gamma_hat"
    );
    // Two acquisition steps plus the final fit.
    assert_eq!(csv.lines().count(), 1 + 3);
    let json = single_json(tmp.path());
    let v: serde_json::Value = serde_json::from_str(&json).unwrap();
    assert_eq!(v["history"].as_array().unwrap().len(), 5);
    assert_eq!(v["final_model"]["format"], "cpbo-surrogate");
    assert_eq!(v["final_model"]["seed"], 3);
}

fn single_json(dir: &Path) -> String {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "json"))
        .collect();
    assert_eq!(files.len(), 1);
    fs::read_to_string(files.pop().unwrap()).unwrap()
}

#[test]
fn repeated_run_is_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        let o = cpbo(&args(&["run", "--seed", "11"], d.path().to_str().unwrap()));
        assert!(o.status.success());
    }
    assert_eq!(single_json(a.path()), single_json(b.path()));
}

#[test]
fn both_budget_and_iterations_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let o = cpbo(&args(&["run", "--budget", "10"], tmp.path().to_str().unwrap()));
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn nonpositive_budget_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let o = cpbo(&["run", "--budget", "-1", "--out", tmp.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let o = cpbo(&[
        "study", "cost", "--study-budget", "0", "--seeds", "0", "--out",
        tmp.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn zero_cost_regime_with_budget_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let o = cpbo(&[
        "run", "--budget", "5", "--c-p", "0", "--c-e", "0", "--out",
        tmp.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn unknown_benchmark_exits_1() {
    let tmp = tempfile::tempdir().unwrap();
    let o = cpbo(&args(&["run", "--benchmark", "nope"], tmp.path().to_str().unwrap()));
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn config_file_is_read_and_overridden() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("cfg.json");
    fs::write(&cfg, r#"{"benchmark": "six_hump_camel", "seed": 9, "gamma_true": 0.02}"#).unwrap();
    let out = tmp.path().join("out");
    let mut a = vec!["run", "--config", cfg.to_str().unwrap(), "--seed", "4"];
    a.extend_from_slice(SMALL);
    a.extend_from_slice(&["--out", out.to_str().unwrap()]);
    let o = cpbo(&a);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_str(&single_json(&out)).unwrap();
    assert_eq!(v["config"]["benchmark"], "six_hump_camel");
    assert_eq!(v["config"]["seed"], 4);
    assert_eq!(v["config"]["gamma_true"], 0.02);
}

#[test]
fn gamma_study_then_report() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().to_str().unwrap();
    let o = cpbo(&args(&["study", "gamma", "--gammas", "0,0.1", "--seeds", "0..2"], out));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = tmp.path().join("results.csv");
    let o = cpbo(&["report", csv.to_str().unwrap(), "--json"]);
    assert!(o.status.success());
    let rows: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let rows = rows.as_array().unwrap();
    assert_eq!(rows.len(), 2);
    assert!(rows.iter().all(|r| r["n_seeds"] == 2));
    let o = cpbo(&["report", csv.to_str().unwrap()]);
    assert!(String::from_utf8_lossy(&o.stdout).starts_with("benchmark"));
}

#[test]
fn cost_study_charges_budget() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().to_str().unwrap();
    let o = cpbo(&[
        "study", "cost", "--regimes", "1:1", "--strategies", "consecutive,standard",
        "--study-budget", "4", "--seeds", "0", "--scale", "desk", "--n-init", "3",
        "--training-iterations", "100", "--metric-pairs", "200", "--out", out,
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rdr = csv_rows(&tmp.path().join("results.csv"));
    // Consecutive: 2 per step -> 2 steps; standard: 3 per step -> 1 step.
    let last_cost = |s: &str| {
        rdr.iter()
            .filter(|r| r.0 == s)
            .map(|r| r.1)
            .fold(0.0_f64, f64::max)
    };
    assert_eq!(last_cost("consecutive"), 4.0);
    assert_eq!(last_cost("standard"), 3.0);
}

fn csv_rows(path: &Path) -> Vec<(String, f64)> {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let si = header.iter().position(|h| *h == "strategy").unwrap();
    let ci = header.iter().position(|h| *h == "cumulative_cost").unwrap();
    lines
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (f[si].to_string(), f[ci].parse().unwrap())
        })
        .collect()
}

#[test]
fn unparsable_flag_exits_2() {
    let o = cpbo(&["run", "--seed", "abc"]);
    assert_eq!(o.status.code(), Some(2));
}
