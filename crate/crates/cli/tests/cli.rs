use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn empi(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_empi"))
        .args(args)
        .output()
        .unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn summary(out: &Output) -> serde_json::Value {
    serde_json::from_slice(&out.stdout).unwrap()
}

#[test]
fn zero_trials_is_an_empty_success() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("r.csv");
    let out = empi(&["verify-bounds", "--trials", "0", "--out", path(&csv)]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(fs::read_to_string(&csv).unwrap(), "");
    assert_eq!(summary(&out)["trials"], 0);
}

#[test]
fn single_state_empi_run_has_one_iteration() {
    let dir = tempfile::tempdir().unwrap();
    let mdp = dir.path().join("one.json");
    let csv = dir.path().join("r.csv");
    let gen = empi(&[
        "gen-mdp",
        "--states",
        "1",
        "--actions",
        "1",
        "--branching",
        "1",
        "--out",
        path(&mdp),
    ]);
    assert_eq!(gen.status.code(), Some(0));
    let out = empi(&["run-empi", "--mdp-file", path(&mdp), "--out", path(&csv)]);
    assert_eq!(out.status.code(), Some(0));
    let text = fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().count(), 2);
    assert!(text.starts_with("iter,j_before,j_after,objective_value,penalty,tv_avg,improved"));
    assert_eq!(summary(&out)["iterations"], 1);
}

#[test]
fn malformed_mdp_file_is_a_usage_error_naming_the_index() {
    let dir = tempfile::tempdir().unwrap();
    let mdp = dir.path().join("bad.json");
    fs::write(
        &mdp,
        r#"{ "num_states": 2, "num_actions": 1, "gamma": 0.9, "start_dist": [1.0, 0.0],
             "transition": [[[0.0, 1.0]], [[0.5, 0.6]]],
             "reward": [[[0.0, 1.0]], [[0.0, 1.0]]] }"#,
    )
    .unwrap();
    let out = empi(&["run-empi", "--mdp-file", path(&mdp)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("[1][0]"));
}

#[test]
fn unknown_flags_and_commands_are_usage_errors() {
    assert_eq!(empi(&["verify-bounds", "--bogus"]).status.code(), Some(2));
    assert_eq!(empi(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(
        empi(&["verify-bounds", "--gamma", "1.5", "--trials", "1"])
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn reports_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let csv = dir.path().join(name);
        let out = empi(&[
            "verify-bounds",
            "--trials",
            "40",
            "--seed",
            "11",
            "--out",
            path(&csv),
        ]);
        assert_eq!(out.status.code(), Some(0));
        fs::read_to_string(csv).unwrap()
    };
    let first = run("a.csv");
    assert_eq!(first.lines().count(), 41);
    assert_eq!(first, run("b.csv"));
}

#[test]
fn campaigns_accept_a_fixed_mdp_file() {
    let dir = tempfile::tempdir().unwrap();
    let mdp = dir.path().join("g.json");
    let csv = dir.path().join("r.csv");
    empi(&[
        "gen-mdp",
        "--states",
        "4",
        "--actions",
        "3",
        "--gamma",
        "0.5",
        "--seed",
        "2",
        "--out",
        path(&mdp),
    ]);
    let out = empi(&[
        "verify-bounds",
        "--trials",
        "10",
        "--mdp-file",
        path(&mdp),
        "--out",
        path(&csv),
    ]);
    assert_eq!(out.status.code(), Some(0));
    let text = fs::read_to_string(csv).unwrap();
    assert!(text
        .lines()
        .skip(1)
        .all(|l| l.contains(",4,3,") && l.contains(",0.5,")));
}

#[test]
fn variant_filter_restricts_the_campaign() {
    let out = empi(&["verify-bounds", "--trials", "6", "--variant", "kl_pinsker"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.lines().skip(1).all(|l| l.contains(",kl_pinsker,")));
}

#[test]
fn trust_region_check_reports_rejections() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("t.csv");
    let out = empi(&[
        "trpo-check",
        "--trials",
        "50",
        "--delta",
        "0.05",
        "--out",
        path(&csv),
    ]);
    assert_eq!(out.status.code(), Some(0));
    let s = summary(&out);
    assert_eq!(s["accepted"], 50);
    assert_eq!(s["violations"], 0);
    assert_eq!(fs::read_to_string(csv).unwrap().lines().count(), 51);
    assert_eq!(empi(&["trpo-check", "--delta", "0"]).status.code(), Some(2));
}

#[test]
fn estimates_agree_with_exact_values() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("e.csv");
    let out = empi(&[
        "estimate",
        "--trials",
        "10",
        "--samples",
        "2000",
        "--noise",
        "0.05",
        "--out",
        path(&csv),
    ]);
    assert_eq!(out.status.code(), Some(0));
    let s = summary(&out);
    assert!(s["return_agreements"].as_u64().unwrap() >= 10 - 1);
}

#[test]
fn estimated_empi_mode_is_monotone() {
    let out = empi(&[
        "run-empi",
        "--gamma",
        "0.3",
        "--noise",
        "0.05",
        "--per-state-penalty",
        "--iters",
        "10",
    ]);
    assert_eq!(out.status.code(), Some(0));
    let rows = String::from_utf8(out.stdout).unwrap();
    assert!(rows.lines().count() >= 2);
}
