//! CLI acceptance: rerunning the pipeline with identical seeds must produce
//! byte-identical files, and the command-line contract (exit codes, JSON
//! shapes) must hold.

use std::path::Path;
use std::process::{Command, Output};

fn routelab(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_routelab"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn assert_success(out: &Output, what: &str) {
    assert!(
        out.status.success(),
        "{what} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn verdict(name: &str, pass: bool, detail: &str) {
    println!("{} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
    assert!(pass, "{name}: {detail}");
}

/// Runs synth -> train -> eval into `dir` and returns the produced bytes.
fn run_pipeline(dir: &Path) -> (Vec<u8>, Vec<u8>, Vec<u8>, Vec<u8>) {
    let synth = routelab(
        &[
            "synth",
            "--seed",
            "3",
            "--questions",
            "40",
            "--features",
            "6",
            "--universe-out",
            "universe.json",
            "--out",
            "data.jsonl",
        ],
        dir,
    );
    assert_success(&synth, "synth");
    let train = routelab(
        &[
            "train",
            "--dataset",
            "data.jsonl",
            "--universe",
            "universe.json",
            "--out",
            "ckpt.json",
            "--epochs",
            "25",
            "--h",
            "32",
            "--d",
            "8",
            "--seed",
            "5",
        ],
        dir,
    );
    assert_success(&train, "train");
    let eval = routelab(
        &[
            "eval",
            "--model",
            "ckpt.json",
            "--dataset",
            "data.jsonl",
            "--universe",
            "universe.json",
            "--out",
            "report.json",
        ],
        dir,
    );
    assert_success(&eval, "eval");
    (
        std::fs::read(dir.join("universe.json")).unwrap(),
        std::fs::read(dir.join("data.jsonl")).unwrap(),
        std::fs::read(dir.join("ckpt.json")).unwrap(),
        std::fs::read(dir.join("report.json")).unwrap(),
    )
}

/// Two identically seeded synth -> train -> eval runs write byte-identical
/// dataset, checkpoint, and report files.
#[test]
fn reruns_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let (ua, da, ca, ra) = run_pipeline(a.path());
    let (ub, db, cb, rb) = run_pipeline(b.path());
    let same = [ua == ub, da == db, ca == cb, ra == rb];
    verdict(
        "deterministic-reruns",
        same.iter().all(|s| *s),
        &format!(
            "universe identical {}, dataset identical {}, checkpoint identical {}, report identical {} ({} dataset bytes, {} checkpoint bytes)",
            same[0],
            same[1],
            same[2],
            same[3],
            da.len(),
            ca.len()
        ),
    );
}

#[test]
fn help_and_bad_usage_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let help = routelab(&["--help"], dir.path());
    assert_eq!(help.status.code(), Some(0), "--help should exit 0");
    assert!(String::from_utf8_lossy(&help.stdout).contains("bounds"));

    let unknown = routelab(&["frobnicate"], dir.path());
    assert_eq!(unknown.status.code(), Some(1), "unknown subcommand should exit 1");

    let bad_value = routelab(&["bounds", "--profile", "x.json", "--rule", "nope", "--n", "4"], dir.path());
    assert_eq!(bad_value.status.code(), Some(1), "invalid rule should exit 1");
}

#[test]
fn bounds_and_simulate_are_consistent() {
    let dir = tempfile::tempdir().unwrap();
    let profile = serde_json::json!({
        "probs": [0.6, 0.25, 0.15],
        "correct_index": 0,
        "mus": [0.8, 0.4, 0.3],
        "sigmas": [0.2, 0.15, 0.1],
    });
    std::fs::write(dir.path().join("profile.json"), profile.to_string()).unwrap();

    let bounds = routelab(
        &["bounds", "--profile", "profile.json", "--rule", "pvl", "--n", "8"],
        dir.path(),
    );
    assert_success(&bounds, "bounds");
    let bound: serde_json::Value = serde_json::from_slice(&bounds.stdout).unwrap();
    let lower = bound["value"].as_f64().unwrap();
    assert_eq!(bound["kind"], "lower");

    let sim = routelab(
        &["simulate", "--profile", "profile.json", "--rule", "pvl", "--n", "8", "--seed", "1"],
        dir.path(),
    );
    assert_success(&sim, "simulate");
    let est: serde_json::Value = serde_json::from_slice(&sim.stdout).unwrap();
    let estimate = est["estimate"].as_f64().unwrap();
    let half_width = est["half_width_95"].as_f64().unwrap();
    assert!(
        lower <= estimate + 3.0 * half_width,
        "lower bound {lower} exceeds estimate {estimate} + 3 * {half_width}"
    );
}

#[test]
fn route_choices_match_model_over_universe() {
    let dir = tempfile::tempdir().unwrap();
    run_pipeline(dir.path());
    let features =
        serde_json::json!([[0.1, 0.2, 0.3, 0.4, 0.5, 0.6], [0.0, 0.0, 0.0, 0.0, 0.0, 0.0]]);
    std::fs::write(dir.path().join("feats.json"), features.to_string()).unwrap();
    let route = routelab(
        &[
            "route",
            "--model",
            "ckpt.json",
            "--features-file",
            "feats.json",
            "--universe",
            "universe.json",
        ],
        dir.path(),
    );
    assert_success(&route, "route");
    let out: serde_json::Value = serde_json::from_slice(&route.stdout).unwrap();
    let choices = out["choices"].as_array().unwrap();
    assert_eq!(choices.len(), 2);
    for c in choices {
        let c = c.as_u64().unwrap();
        assert!(c < 12, "choice {c} outside the 12-method universe");
    }
}
