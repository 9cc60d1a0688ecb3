use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use ccopf::config::{RTS24_CASE, TABLE1_CONFIG};
use ccopf::experiment::ExperimentReport;

fn ccopf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ccopf")).args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

/// A reduced copy of the bundled configuration, with the case file next
/// to it.
fn small_config(dir: &Path, extra: &str) -> String {
    fs::write(dir.join("rts24.case"), RTS24_CASE).unwrap();
    let text = TABLE1_CONFIG
        .replace("replications = 20", "replications = 2")
        .replace("n_tuning = 10000", "n_tuning = 2000")
        .replace("n_oos = 100000", "n_oos = 4000")
        .replace("gamma = 1e-4", &format!("gamma = 5e-4\n{extra}"));
    let path = dir.join("small.cfg");
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn usage_errors_exit_with_one() {
    assert_eq!(code(&ccopf(&["--help"])), 0);
    assert_eq!(code(&ccopf(&["frobnicate"])), 1);
    assert_eq!(code(&ccopf(&["tune", "--mode", "both"])), 1);
    assert_eq!(code(&ccopf(&["solve"])), 1);
    assert_eq!(code(&ccopf(&["ptdf", "--config", "/nonexistent/x.cfg"])), 1);
}

#[test]
fn parse_reports_bad_lines() {
    let dir = tempfile::tempdir().unwrap();
    let good = dir.path().join("good.case");
    fs::write(&good, RTS24_CASE).unwrap();
    let out = ccopf(&["parse", good.to_str().unwrap()]);
    assert_eq!(code(&out), 0);
    assert!(String::from_utf8_lossy(&out.stderr).contains("24 buses, 38 lines"));

    let bad = dir.path().join("bad.case");
    fs::write(&bad, "base 100\nbus 1 0\nbus 2 x\n").unwrap();
    let out = ccopf(&["parse", bad.to_str().unwrap()]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 3"));

    let out = ccopf(&["parse", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&out), 0);
    let written = fs::read_to_string(dir.path().join("case.case")).unwrap();
    let again = ccopf::case_file::parse_case(&written).unwrap();
    assert_eq!(again.n_lines(), 38);
}

#[test]
fn ptdf_and_samples() {
    let out = ccopf(&["ptdf"]);
    assert_eq!(code(&out), 0);
    let text = stdout(&out);
    assert_eq!(text.lines().count(), 39);
    assert_eq!(text.lines().next().unwrap().split(',').count(), 27);

    let out = ccopf(&["sample", "--n", "10", "--distribution", "mixture"]);
    assert_eq!(code(&out), 0);
    let text = stdout(&out);
    assert_eq!(text.lines().count(), 11);
    for line in text.lines().skip(1) {
        let nonzero: Vec<usize> = line
            .split(',')
            .enumerate()
            .filter(|(_, v)| v.parse::<f64>().unwrap() != 0.0)
            .map(|(i, _)| i)
            .collect();
        assert!(nonzero.iter().all(|&i| i == 7 || i == 14), "{line}");
    }
    assert_eq!(stdout(&ccopf(&["sample", "--n", "10", "--distribution", "mixture"])), text);
    assert_ne!(stdout(&ccopf(&["sample", "--n", "10", "--distribution", "mixture", "--oos"])), text);
}

#[test]
fn solve_and_infeasibility() {
    let out = ccopf(&["solve", "--s", "1.0", "--format", "json"]);
    assert_eq!(code(&out), 0);
    let v: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    let total: f64 = v["dispatch"].as_array().unwrap().iter().map(|d| d["p_mw"].as_f64().unwrap()).sum();
    assert!((total - 2850.0).abs() < 1e-4, "{total}");
    assert!(v["cost"].as_f64().unwrap() > 0.0);

    let out = ccopf(&["solve", "--s", "60"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn tune_then_evaluate_on_exported_samples() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "");
    let out_dir = dir.path().join("out");
    let o = out_dir.to_str().unwrap();
    let out = ccopf(&["tune", "--config", &cfg, "--mode", "joint", "--eps", "0.1", "--out", o]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let trace = fs::read_to_string(out_dir.join("trace.csv")).unwrap();
    assert!(trace.starts_with("iteration,kind,s,feasible,eps_obs_single,eps_obs_joint,cost\n0,probe,0,"));
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(out_dir.join("tune.json")).unwrap()).unwrap();
    assert_eq!(summary["terminated_by"], "eps_tolerance");
    assert!((summary["eps_obs_joint"].as_f64().unwrap() - 0.1).abs() <= 5e-4 + 1e-12);

    let samples = ccopf(&["sample", "--config", &cfg, "--n", "50", "--oos"]);
    let path = dir.path().join("oos.csv");
    fs::write(&path, samples.stdout).unwrap();
    let out = ccopf(&["evaluate", "--config", &cfg, "--s", "1.5", "--samples", path.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(v["n_samples"], 50);
    assert_eq!(v["constraints"].as_array().unwrap().len(), 96);
    assert!(v["eps_joint"].as_f64().unwrap() >= v["eps_single"].as_f64().unwrap());
}

#[test]
fn experiment_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "");
    let out = ccopf(&["experiment", "--config", &cfg, "--eps", "0.1,0.05", "--mode", "single", "--format", "json", "--jobs", "2"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let report = ExperimentReport::from_json(&stdout(&out)).unwrap();
    assert_eq!(report.average_rows().count(), 4);
    assert_eq!(report.rows.len(), 12);

    let csv = ccopf(&["experiment", "--config", &cfg, "--eps", "0.1,0.05", "--mode", "single", "--seed", "5"]);
    assert_eq!(code(&csv), 0);
    let text = stdout(&csv);
    assert!(text.starts_with("mode,distribution,eps_des,replication,iterations,cost,s,s_true,"));
    assert_eq!(text.lines().count(), 13);

    let failing = small_config(dir.path(), "s_max = 0.01");
    let out = ccopf(&["experiment", "--config", &failing, "--eps", "0.1", "--mode", "joint"]);
    assert_eq!(code(&out), 2);
    assert!(stdout(&out).contains("failed: "));
}
