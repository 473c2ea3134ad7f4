//! End-to-end behavior of the binary: exit codes, artifacts, and the
//! report round trip.

use std::path::PathBuf;
use std::process::{Command, Output};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_consensus-sim")
}

fn run(args: &[&str]) -> Output {
    Command::new(bin()).args(args).output().unwrap()
}

fn tmp(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("consensus-cli-{tag}"));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

#[test]
fn analyze_preset_passes_and_prints_spectrum() {
    let out = run(&["analyze", "--preset", "example1"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("lambda_2 = 1.000000000"));
    assert!(text.contains("lambda_N = 2.000000000"));
    assert!(text.contains("analyze: pass"));
}

#[test]
fn analyze_star_graph_fails_balance_with_exit_1() {
    let dir = tmp("star");
    let mut cfg = consensus_core::scenario::preset_example1();
    cfg.graph.edges = vec![
        consensus_core::scenario::EdgeConfig { from: 1, to: 2, w: 1.0 },
        consensus_core::scenario::EdgeConfig { from: 1, to: 3, w: 1.0 },
        consensus_core::scenario::EdgeConfig { from: 1, to: 4, w: 1.0 },
    ];
    let path = dir.join("star.json");
    std::fs::write(&path, cfg.to_json()).unwrap();
    let out = run(&["analyze", "--config", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("weight balanced FAIL"));
}

#[test]
fn analyze_flags_overclaimed_convexity() {
    let dir = tmp("badl");
    let mut cfg = consensus_core::scenario::preset_example2();
    cfg.costs[3].l_lower = 5.0;
    cfg.costs[3].l_upper = 5.0;
    let path = dir.join("badl.json");
    std::fs::write(&path, cfg.to_json()).unwrap();
    let out = run(&["analyze", "--config", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("cost 4: convexity window FAIL"));
}

#[test]
fn malformed_config_exits_2() {
    let dir = tmp("malformed");
    let path = dir.join("broken.json");
    std::fs::write(&path, "{ not json").unwrap();
    let out = run(&["analyze", "--config", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(run(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(run(&["simulate"]).status.code(), Some(2)); // no scenario
    assert_eq!(
        run(&["simulate", "--preset", "nope"]).status.code(),
        Some(2)
    );
    assert_eq!(
        run(&["report", "--preset", "example1"]).status.code(),
        Some(2)
    ); // report needs --csv
}

#[test]
fn dump_config_round_trips() {
    let out = run(&["simulate", "--preset", "example2", "--dump-config"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    let cfg = consensus_core::scenario::ScenarioConfig::from_json(&text).unwrap();
    assert_eq!(cfg.to_json(), text.trim_end());
    // The dump can be fed straight back in.
    let dir = tmp("dump");
    let path = dir.join("dumped.json");
    std::fs::write(&path, &text).unwrap();
    let out = run(&["analyze", "--config", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
}

#[test]
fn simulate_writes_artifacts_and_report_round_trips() {
    let dir = tmp("roundtrip");
    let out = run(&[
        "simulate",
        "--preset",
        "example1",
        "--out",
        dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0));
    for f in ["trajectory.csv", "report.json", "report.txt", "config.json"] {
        assert!(dir.join(f).exists(), "{f} missing");
    }
    let inline = String::from_utf8(out.stdout).unwrap();

    // Recomputing from the CSV with the sidecar config gives the same
    // settle time.
    let csv = dir.join("trajectory.csv");
    let sidecar = dir.join("config.json");
    let re = run(&[
        "report",
        "--csv",
        csv.to_str().unwrap(),
        "--config",
        sidecar.to_str().unwrap(),
    ]);
    assert_eq!(re.status.code(), Some(0));
    let retext = String::from_utf8(re.stdout).unwrap();
    let settle_line = |s: &str| {
        s.lines()
            .find(|l| l.starts_with("settled from"))
            .map(String::from)
    };
    assert_eq!(settle_line(&inline), settle_line(&retext));

    // Overriding y* with the known optimum gives identical numbers too.
    let re2 = run(&["report", "--csv", csv.to_str().unwrap(), "--y-star", "4.0"]);
    assert_eq!(re2.status.code(), Some(0));
    assert_eq!(
        settle_line(&String::from_utf8(re2.stdout).unwrap()),
        settle_line(&retext)
    );
}

#[test]
fn report_rejects_truncated_csv_with_line_number() {
    let dir = tmp("truncated");
    let path = dir.join("cut.csv");
    std::fs::write(&path, "t,y1,u1,z1\n0.0,1.0,2.0,3.0\n0.1,1.0,2.0\n").unwrap();
    let out = run(&["report", "--csv", path.to_str().unwrap(), "--y-star", "1.0"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("line 3"), "stderr: {err}");
}

#[test]
fn tune_with_tight_gamma_cap_exits_1() {
    let dir = tmp("gcap");
    let mut cfg = consensus_core::scenario::preset_example1();
    cfg.gains.gamma = consensus_core::scenario::MaybeAuto::AUTO;
    cfg.gains.gamma_max = 1.0;
    let path = dir.join("gcap.json");
    std::fs::write(&path, cfg.to_json()).unwrap();
    let out = run(&[
        "tune",
        "--config",
        path.to_str().unwrap(),
        "--out",
        dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("no gamma"), "stderr: {err}");
}

#[test]
fn tune_formula_mode_reports_spectrum_rule_gains() {
    let dir = tmp("formula");
    let mut cfg = consensus_core::scenario::preset_example2();
    cfg.gains.tuning = consensus_core::scenario::TuningMode::Formula;
    // The spectrum-rule beta = 1944 would need a far smaller step to
    // certify/simulate; tune only certifies, which is fine.
    let path = dir.join("formula.json");
    std::fs::write(&path, cfg.to_json()).unwrap();
    let out = run(&[
        "tune",
        "--config",
        path.to_str().unwrap(),
        "--out",
        dir.to_str().unwrap(),
    ]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("alpha = 9.00000000000000"), "{text}");
    assert!(text.contains("beta = 1944.0000000000"), "{text}");
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("tune_report.json")).unwrap())
            .unwrap();
    assert!(json["certificate"]["sampled_w"].as_array().unwrap().len() >= 16);
}
