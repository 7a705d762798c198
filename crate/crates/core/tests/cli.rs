use std::path::PathBuf;
use std::process::{Command, Output};

use serde_json::Value;

fn fixture(name: &str) -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name).display().to_string()
}

fn adlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_adlab")).args(args).output().expect("binary runs")
}

fn json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).expect("stdout is a JSON report")
}

#[test]
fn run_writes_report_and_records_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("report.json");
    let out = adlab(&["run", &fixture("wm_rp.toml"), "--samples", "777", "--out", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(out.stdout.is_empty());
    let report: Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    assert_eq!(report["command"], "run");
    assert_eq!(report["config"]["scenario"]["samples"], 777);
    assert_eq!(report["config"]["scenario"]["seed"], 11);
    assert_eq!(report["config"]["scenario"]["price_grid"], 2001);
    assert_eq!(report["result"]["samples"], 777);
}

#[test]
fn price_outside_domain_is_rejected_with_line() {
    let out = adlab(&["run", &fixture("bad_price.toml")]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("bad_price.toml:13:") && err.contains("price_mode.prices[1]"), "{err}");
    assert!(out.stdout.is_empty());
}

#[test]
fn welfare_maximizer_passes_every_check() {
    let out = adlab(&["verify", &fixture("wm_rp.toml")]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    let report = json(&out);
    let verdicts = report["result"]["verdicts"].as_array().unwrap();
    assert_eq!(verdicts.len(), 8);
    assert!(verdicts.iter().all(|v| v["pass"] == true));
}

#[test]
fn first_price_fails_truthfulness_with_magnitude() {
    let out = adlab(&["verify", &fixture("first_price.toml"), "--checks", "ic"]);
    assert_eq!(out.status.code(), Some(1));
    let report = json(&out);
    let v = &report["result"]["verdicts"][0];
    assert_eq!(v["check"], "ic");
    assert_eq!(v["pass"], false);
    assert!(v["max_violation"].as_f64().unwrap() > 0.1);
}

#[test]
fn unknown_check_is_rejected() {
    let out = adlab(&["verify", &fixture("wm_rp.toml"), "--checks", "ic,fairness"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("fairness"));
}

#[test]
fn explicit_revenue_equivalence_on_diagnostic_is_refused() {
    let out = adlab(&["verify", &fixture("first_price.toml"), "--checks", "rev-eq"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn price_independent_mode_needs_price_independent_mechanism() {
    let out = adlab(&["equilibrium", &fixture("ama_pi_mode.toml")]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("price-independent"));
}

#[test]
fn unimodal_rate_gives_unit_price() {
    let out = adlab(&["equilibrium", &fixture("unimodal_pia.toml")]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let report = json(&out);
    let step = 4.0 / 2000.0;
    for p in report["result"]["pi_prices"].as_array().unwrap() {
        assert!((p.as_f64().unwrap() - 1.0).abs() <= step);
    }
}

#[test]
fn exponential_rate_prices_at_cost_plus_one() {
    let out = adlab(&["equilibrium", &fixture("exp_ama.toml"), "--format", "csv"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    let step = 4.0 / 2000.0;
    let mut rows = 0;
    for line in text.lines().filter(|l| l.starts_with("ama-price,")) {
        let cells: Vec<&str> = line.split(',').collect();
        let (c, p): (f64, f64) = (cells[2].parse().unwrap(), cells[3].parse().unwrap());
        assert!((p - (c + 1.0)).abs() <= step, "{line}");
        rows += 1;
    }
    assert_eq!(rows, 22);
    assert!(text.lines().filter(|l| l.starts_with("best-response,")).all(|l| l.ends_with(",PASS")));
}

#[test]
fn optimize_reports_incumbent_and_evaluations() {
    let out = adlab(&["optimize", &fixture("exp_ama.toml"), "--grid", "w=1;b=-0.1:0:0.1", "--samples", "2000"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let report = json(&out);
    assert_eq!(report["config"]["grid"], "w=1;b=-0.1:0:0.1");
    assert_eq!(report["result"]["best"]["weights"].as_array().unwrap().len(), 2);
    assert!(report["result"]["evaluations"].as_array().unwrap().len() >= 4);
}

#[test]
fn malformed_grid_is_rejected() {
    let out = adlab(&["optimize", &fixture("exp_ama.toml"), "--grid", "w=0:1"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(adlab(&["run"]).status.code(), Some(2));
    assert_eq!(adlab(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(adlab(&["run", &fixture("wm_rp.toml"), "--format", "xml"]).status.code(), Some(2));
    assert_eq!(adlab(&["run", &fixture("missing.toml")]).status.code(), Some(2));
    assert_eq!(adlab(&["--help"]).status.code(), Some(0));
}

#[test]
fn csv_report_carries_config() {
    let out = adlab(&["run", &fixture("wm_rp.toml"), "--format", "csv", "--samples", "100"]);
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("# command=run"));
    let config: Value = serde_json::from_str(lines.next().unwrap().strip_prefix("# config=").unwrap()).unwrap();
    assert_eq!(config["scenario"]["samples"], 100);
    assert_eq!(config["format"], "csv");
    assert_eq!(lines.next(), Some("metric,mean,std_error"));
}

#[test]
fn reports_do_not_depend_on_worker_count() {
    let wm = fixture("wm_rp.toml");
    let vwm = fixture("vwm_rp.toml");
    let ama = fixture("exp_ama.toml");
    let commands: Vec<Vec<&str>> = vec![
        vec!["run", &wm, "--samples", "5000"],
        vec!["verify", &vwm, "--instances", "40", "--samples", "5000"],
        vec!["equilibrium", &ama, "--samples", "2000"],
        vec!["optimize", &ama, "--samples", "2000", "--format", "csv"],
        vec!["compare", &wm, &vwm, "--samples", "5000"],
    ];
    for args in commands {
        let reference = adlab(&[args.as_slice(), &["--workers", "1"]].concat());
        for workers in ["1", "4"] {
            let again = adlab(&[args.as_slice(), &["--workers", workers]].concat());
            assert_eq!(again.status.code(), reference.status.code());
            assert!(again.stdout == reference.stdout, "{} differs with {workers} workers", args[0]);
        }
    }
}
