mod common;

use std::path::Path;
use std::process::{Command, Output};

use common::game_path;

fn igame(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_igame"))
        .args(args)
        .output()
        .unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn lin1() -> String {
    game_path("lin1.json").to_string_lossy().into_owned()
}

fn simulated(dir: &Path) -> String {
    let out = dir.join("lin1.csv");
    assert!(igame(&["simulate", &lin1(), "--out", path(&out)])
        .status
        .success());
    out.to_string_lossy().into_owned()
}

#[test]
fn simulate_writes_one_row_per_grid_point() {
    let out = igame(&["simulate", &lin1()]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().count(), 1002);
    assert!(text.starts_with("t,"));
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(igame(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(
        igame(&["simulate", &lin1(), "--format", "xml"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        igame(&["simulate", "/no/such/game.json"]).status.code(),
        Some(2)
    );
    assert_eq!(
        igame(&["predict", &lin1(), "--dt", "2", "--depth-cap", "1"])
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn divergence_exits_3_and_keeps_a_partial_file() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("d.csv");
    let res = igame(&[
        "simulate",
        &game_path("diverge.json").to_string_lossy(),
        "--out",
        path(&out),
    ]);
    assert_eq!(res.status.code(), Some(3));
    assert!(!out.exists());
    let partial = std::fs::read_to_string(dir.path().join("d.csv.partial")).unwrap();
    assert!(partial.lines().count() > 1);
}

#[test]
fn insufficient_data_exits_4() {
    let res = igame(&["predict", &lin1(), "--dt", "0.5", "--window", "100000"]);
    assert_eq!(
        res.status.code(),
        Some(4),
        "{}",
        String::from_utf8_lossy(&res.stderr)
    );
}

#[test]
fn replay_on_the_neutral_game_is_exact() {
    let neutral = game_path("lin1_neutral.json")
        .to_string_lossy()
        .into_owned();
    let res = igame(&[
        "predict",
        &neutral,
        "--predictor",
        "replay",
        "--dt",
        "0.5",
        "--format",
        "json",
    ]);
    assert!(res.status.success());
    let metrics: serde_json::Value = serde_json::from_slice(&res.stdout).unwrap();
    assert!(metrics["baseline"]["state_rmse"].as_f64().unwrap() <= 1e-9);
}

#[test]
fn predict_improves_on_lin1_and_writes_the_log() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("log.jsonl");
    let res = igame(&[
        "predict",
        &lin1(),
        "--dt",
        "0.5",
        "--window",
        "200",
        "--seed",
        "7",
        "--log",
        path(&log),
    ]);
    assert!(res.status.success());
    let metrics: serde_json::Value = serde_json::from_slice(&res.stdout).unwrap();
    let rmse = |k: &str| metrics[k]["state_rmse"].as_f64().unwrap();
    assert!(rmse("corrected") < rmse("baseline"));
    assert!(std::fs::read_to_string(log).unwrap().lines().count() > 100);
}

#[test]
fn estimate_eps_flags_the_origin() {
    let dir = tempfile::tempdir().unwrap();
    let traj = simulated(dir.path());
    let game = lin1();
    for extra in [&[][..], &["--no-warm-start"][..]] {
        let mut args = vec!["estimate-eps", &game, &traj];
        args.extend_from_slice(extra);
        let res = igame(&args);
        assert!(res.status.success());
        let text = String::from_utf8(res.stdout).unwrap();
        assert_eq!(
            text.lines()
                .filter(|l| l.contains("UNIDENTIFIABLE"))
                .count(),
            2
        );
        assert_eq!(
            text.lines().filter(|l| l.contains(",IDENTIFIED,")).count(),
            2000
        );
    }
}

#[test]
fn invariants_reports_verdicts() {
    let dir = tempfile::tempdir().unwrap();
    let traj = simulated(dir.path());
    let cands = game_path("candidates.json").to_string_lossy().into_owned();
    let res = igame(&["invariants", &lin1(), &traj, &cands, "--perturb", "2"]);
    assert!(
        res.status.success(),
        "{}",
        String::from_utf8_lossy(&res.stderr)
    );
    let report: serde_json::Value = serde_json::from_slice(&res.stdout).unwrap();
    let text = report.to_string();
    assert!(text.contains("CLOSED_DYNAMICS"), "{text}");
}

#[test]
fn analyze_produces_a_prognosis() {
    let res = igame(&["analyze", &lin1(), "--dt", "0.5"]);
    assert!(
        res.status.success(),
        "{}",
        String::from_utf8_lossy(&res.stderr)
    );
    let prognosis: serde_json::Value = serde_json::from_slice(&res.stdout).unwrap();
    assert!(prognosis["segments"]
        .as_array()
        .is_some_and(|s| !s.is_empty()));
}
