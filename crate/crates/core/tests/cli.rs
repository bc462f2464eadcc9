use std::fs;
use std::path::Path;
use std::process::Command;

use fusion_core::sim::{self, DgpSpec, Example};
use serde_json::Value;

fn write_csv(path: &Path, n: usize, seed: u64) {
    let (d, _) = sim::generate(&DgpSpec::new(Example::One, n, seed)).unwrap();
    let mut s = String::from("y,x,z1,z2\n");
    for i in 0..n {
        s += &format!("{},{},{},{}\n", d.y()[i], d.x()[(i, 0)], d.z()[(i, 1)], d.z()[(i, 2)]);
    }
    fs::write(path, s).unwrap();
}

fn cfusion(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_cfusion")).args(args).output().unwrap()
}

fn data_args(csv: &Path) -> Vec<String> {
    ["--data", csv.to_str().unwrap(), "--response", "y", "--treat", "x", "--covar", "z1,z2", "--grid-size", "20"]
        .iter()
        .map(|s| s.to_string())
        .collect()
}

fn run_with(cmd: &str, csv: &Path, extra: &[&str]) -> std::process::Output {
    let mut args: Vec<String> = vec![cmd.into()];
    args.extend(data_args(csv));
    args.extend(extra.iter().map(|s| s.to_string()));
    let refs: Vec<&str> = args.iter().map(String::as_str).collect();
    cfusion(&refs)
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(cfusion(&[]).status.code(), Some(2));
    assert_eq!(cfusion(&["select", "--bogus"]).status.code(), Some(2));
    let out = cfusion(&["select", "--data", "a.csv", "--response", "y", "--treat", "x", "--penalty", "scad", "--gamma", "0.5"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn runtime_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.csv");
    let out = run_with("select", &missing, &[]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope.csv"));

    let csv = dir.path().join("d.csv");
    write_csv(&csv, 40, 3);
    let out = cfusion(&["select", "--data", csv.to_str().unwrap(), "--response", "y", "--treat", "w"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains('w'));
}

#[test]
fn select_writes_json_and_sidecar_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("d.csv");
    write_csv(&csv, 60, 11);
    let out_a = dir.path().join("a.json");
    let out_b = dir.path().join("b.json");
    for out in [&out_a, &out_b] {
        let o = run_with("select", &csv, &["--out", out.to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let (a, b) = (fs::read_to_string(&out_a).unwrap(), fs::read_to_string(&out_b).unwrap());
    assert_eq!(a, b);
    let v: Value = serde_json::from_str(&a).unwrap();
    let groups = v["groups"].as_array().unwrap();
    assert_eq!(groups.len() as u64, v["k_hat"].as_u64().unwrap());
    let covered: usize = groups.iter().map(|g| g.as_array().unwrap().len()).sum();
    assert_eq!(covered, 60);
    assert_eq!(v["eta_hat"].as_array().unwrap().len(), 3);

    let gram = fs::read_to_string(dir.path().join("a.fusiongram.csv")).unwrap();
    assert_eq!(gram.lines().count(), 1 + 20 * 60);
}

#[test]
fn infer_and_fit_emit_json_on_stdout() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("d.csv");
    write_csv(&csv, 60, 12);
    let o = run_with("infer", &csv, &["--level", "0.9"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    let inf = &v["inference"];
    assert_eq!(inf["level"].as_f64(), Some(0.9));
    let k = v["subgroup"]["k_hat"].as_u64().unwrap() as usize;
    assert_eq!(inf["asd_alpha"].as_array().unwrap().len(), k);

    let fit = cfusion(&[
        "fit", "--data", csv.to_str().unwrap(), "--response", "y", "--treat", "x", "--lambda", "0.5",
    ]);
    assert_eq!(fit.status.code(), Some(0), "{}", String::from_utf8_lossy(&fit.stderr));
    let v: Value = serde_json::from_slice(&fit.stdout).unwrap();
    assert!(v.is_object());
}

#[test]
fn simulate_small_study() {
    let dir = tempfile::tempdir().unwrap();
    let ledger = dir.path().join("ledger.csv");
    let o = cfusion(&[
        "simulate", "--example", "1", "--n", "40", "--reps", "2", "--seed", "5", "--penalties", "mcp",
        "--grid-size", "15", "--ledger", ledger.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["summaries"].as_array().unwrap().len(), 1);
    assert!(fs::read_to_string(&ledger).unwrap().lines().count() >= 3);
}
