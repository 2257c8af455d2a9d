//! End-to-end runs of the compiled binary: exit codes, output shapes,
//! and the round trip from verification through validation.

use std::path::PathBuf;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_whcert"))
}

fn config(name: &str) -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs")
        .join(name)
        .display()
        .to_string()
}

fn tmp(name: &str) -> String {
    std::env::temp_dir().join(format!("whcert-cli-{}-{name}", std::process::id())).display().to_string()
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout_json(out: &Output) -> serde_json::Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| {
        panic!("stdout is not JSON ({e}): {}", String::from_utf8_lossy(&out.stdout))
    })
}

#[test]
fn graph_emits_json_dot_and_crosschecks() {
    let out = run(&["graph", "--r", "2", "--s", "4"]);
    assert_eq!(out.status.code(), Some(0));
    let v = stdout_json(&out);
    assert_eq!(v["nodes"].as_array().unwrap().len(), 3);
    assert_eq!(v["edges"].as_array().unwrap().len(), 6);
    assert_eq!(v["initial"], "v1");

    let out = run(&["graph", "--r", "2", "--s", "4", "--dot"]);
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.starts_with("digraph"), "{text}");
    assert!(text.contains("v1 -> v2"));

    let out = run(&["graph", "--r", "3", "--s", "5", "--check-len", "10"]);
    assert_eq!(out.status.code(), Some(0));

    let out = run(&["graph", "--r", "5", "--s", "3"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("invalid constraint"));
}

#[test]
fn verify_validate_levelset_round_trip() {
    let cert = tmp("cs1-gbf.json");
    let out = run(&["verify", "--problem", &config("cs1.json"), "--variant", "gbf", "--cert-out", &cert]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(stdout_json(&out)["status"], "Certified");

    let out = run(&["validate", "--problem", &config("cs1.json"), "--cert", &cert, "--samples", "5000"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v = stdout_json(&out);
    assert_eq!(v["pass"], true);
    assert_eq!(v["strict_failures"], 0);

    let out = run(&["levelset", "--cert", &cert, "--node", "v1", "--grid", "-1:1:5,-1:1:5"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8_lossy(&out.stdout);
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("x1,x2,psi,sign"));
    assert_eq!(lines.count(), 25);

    std::fs::remove_file(&cert).ok();
}

#[test]
fn verify_reports_infeasible_variants_with_exit_three() {
    let out = run(&["verify", "--problem", &config("cs1.json"), "--variant", "1dgbf"]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stdout));
    assert_eq!(stdout_json(&out)["status"], "Infeasible");
}

#[test]
fn verify_dispatches_polynomial_models_to_sos() {
    let sched = tmp("sched-deg3.json");
    std::fs::write(&sched, "{\"sos_degree\": 3}").unwrap();
    let out = run(&[
        "verify",
        "--problem",
        &config("cs3.json"),
        "--variant",
        "1dgbf",
        "--schedule",
        &sched,
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(stdout_json(&out)["status"], "Certified");
    std::fs::remove_file(&sched).ok();
}

#[test]
fn simulate_prints_one_row_per_state_and_monitors() {
    let cert = tmp("cs1-dgbf.json");
    let out = run(&["verify", "--problem", &config("cs1.json"), "--variant", "dgbf", "--cert-out", &cert]);
    assert_eq!(out.status.code(), Some(0));

    let out = run(&[
        "simulate",
        "--problem",
        &config("cs1.json"),
        "--word",
        "10011",
        "--x0",
        "0.3,0.1",
        "--cert",
        &cert,
    ]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8_lossy(&out.stdout);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "t,x1,x2,u1,delivered,node,psi");
    assert_eq!(lines.len(), 1 + 6, "one header plus six states");

    let out = run(&[
        "simulate",
        "--problem",
        &config("cs1.json"),
        "--word",
        "10011",
        "--x0",
        "0.3,0.1",
        "--cert",
        &cert,
        "--monitor",
    ]);
    assert_eq!(out.status.code(), Some(0));
    let v = stdout_json(&out);
    assert_eq!(v["pass"], true);
    assert_eq!(v["entries"].as_array().unwrap().len(), 5);

    std::fs::remove_file(&cert).ok();
}

#[test]
fn simulate_rejects_inadmissible_words() {
    let out = run(&[
        "simulate",
        "--problem",
        &config("cs1.json"),
        "--word",
        "1000",
        "--x0",
        "0.1,0.1",
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!out.stderr.is_empty());
}

#[test]
fn falsify_finds_the_enlarged_case_and_clears_the_safe_one() {
    let out = run(&["falsify", "--problem", &config("cs4.json"), "--horizon", "8", "--samples", "50"]);
    assert_eq!(out.status.code(), Some(5), "{}", String::from_utf8_lossy(&out.stdout));
    let v = stdout_json(&out);
    assert!(v["counterexample"].is_object());

    let out = run(&["falsify", "--problem", &config("cs1.json"), "--horizon", "6", "--samples", "50"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(stdout_json(&out)["counterexample"].is_null());
}

#[test]
fn synthesize_returns_a_certified_gain() {
    let out = run(&["synthesize", "--problem", &config("cs4.json")]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v = stdout_json(&out);
    assert_eq!(v["status"], "Certified");
    let gain = v["gain"][0].as_array().unwrap();
    assert_eq!(gain.len(), 2);
}

#[test]
fn config_errors_exit_two_with_the_offending_path() {
    let broken = tmp("broken.json");
    std::fs::write(&broken, "{\"system\": [").unwrap();
    let out = run(&["verify", "--problem", &broken, "--variant", "gbf"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("config error"));
    std::fs::remove_file(&broken).ok();

    let out = run(&["verify", "--problem", &config("cs3_unsafe_above.json"), "--variant", "1dgbf"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("x0"));
}

#[test]
fn thread_cap_is_honored() {
    let out = bin()
        .env("WHCERT_THREADS", "1")
        .args(["falsify", "--problem", &config("cs1.json"), "--horizon", "4", "--samples", "20"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn seed_changes_sampling_but_not_the_verdict() {
    for seed in ["0", "1"] {
        let out = run(&[
            "--seed",
            seed,
            "falsify",
            "--problem",
            &config("cs1.json"),
            "--horizon",
            "5",
            "--samples",
            "30",
        ]);
        assert_eq!(out.status.code(), Some(0));
    }
}
