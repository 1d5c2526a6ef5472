use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use crmopo::generate::flip_chain;
use crmopo::load_cmdp;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn crmopo(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_crmopo"))
        .args(args)
        .env_remove("CRMOPO_OUT_DIR")
        .output()
        .unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn golden_fixture_is_the_flip_chain() {
    assert_eq!(load_cmdp(fixture("flip_chain.json")).unwrap(), flip_chain(0.9, 0.5));
    let out = crmopo(&["validate", fixture("flip_chain.json").to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(String::from_utf8_lossy(&out.stdout).contains("ok (2 states, 2 actions"));
}

#[test]
fn validate_reports_bad_discount_and_truncation() {
    let dir = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(fixture("flip_chain.json")).unwrap();

    let bad = dir.path().join("bad.json");
    fs::write(&bad, text.replace("\"gamma\": 0.9", "\"gamma\": 1.2")).unwrap();
    let out = crmopo(&["validate", bad.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("discount out of"), "{}", stderr(&out));

    let cut = dir.path().join("cut.json");
    fs::write(&cut, &text[..100]).unwrap();
    let out = crmopo(&["validate", cut.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("byte 100"), "{}", stderr(&out));
}

#[test]
fn generate_is_deterministic_and_loadable() {
    let dir = tempfile::tempdir().unwrap();
    for spec in ["gridworld.toml", "random.toml"] {
        let a = dir.path().join("a.json");
        let b = dir.path().join("b.json");
        for path in [&a, &b] {
            let out = crmopo(&["generate", fixture(spec).to_str().unwrap(), "-o", path.to_str().unwrap()]);
            assert!(out.status.success(), "{}", stderr(&out));
        }
        assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
        let model = load_cmdp(&a).unwrap();
        assert_eq!(model.n_channels(), 3);
    }
    let other = dir.path().join("other.json");
    let out = crmopo(&[
        "generate",
        fixture("random.toml").to_str().unwrap(),
        "--seed",
        "8",
        "-o",
        other.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    assert_ne!(fs::read(&other).unwrap(), fs::read(dir.path().join("a.json")).unwrap());
}

#[test]
fn generate_rejects_zero_actions() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("zero.toml");
    fs::write(&spec, "kind = \"random-cmdp\"\nn_states = 3\nn_actions = 0\nm = 1\np = 0\n").unwrap();
    let out = crmopo(&["generate", spec.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("n_actions"), "{}", stderr(&out));
}

#[test]
fn frontier_export() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("front.csv");
    let out = crmopo(&[
        "frontier",
        fixture("flip_chain.json").to_str().unwrap(),
        "--resolution",
        "21",
        "-o",
        csv.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = fs::read_to_string(&csv).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "f_0,f_1,f_2,safe,pi_0_0,pi_0_1,pi_1_0,pi_1_1");
    for line in lines {
        let fields: Vec<&str> = line.split(',').collect();
        assert!(fields[2].parse::<f64>().unwrap() <= 0.5);
        assert_eq!(fields[3], "true");
    }
}

#[test]
fn run_writes_traces_summary_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");
    let out = crmopo(&[
        "run",
        fixture("flip_chain_experiment.toml").to_str().unwrap(),
        "-o",
        out_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    for seed in 0..3 {
        let trace = fs::read_to_string(out_dir.join(format!("trace_seed{seed}.csv"))).unwrap();
        assert_eq!(trace.lines().count(), 301);
    }
    let summary: toml::Value = toml::from_str(&fs::read_to_string(out_dir.join("summary.toml")).unwrap()).unwrap();
    let budget = summary["experiment"]["gap_budget"].as_float().unwrap();
    assert!((budget - 0.5).abs() < 1e-12);
    let runs = summary["runs"].as_array().unwrap();
    assert_eq!(runs.len(), 3);
    for run in runs {
        assert!(run["gap"].as_float().unwrap() <= budget);
        assert_eq!(run["gap_within_budget"].as_bool(), Some(true));
    }
}

#[test]
fn manifest_reproduces_traces() {
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("first");
    let out = crmopo(&[
        "run",
        fixture("flip_chain_experiment.toml").to_str().unwrap(),
        "-o",
        first.to_str().unwrap(),
        "--seeds",
        "4",
        "--horizon",
        "50",
        "--no-oracle",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));

    // the manifest alone, moved elsewhere, must reproduce the run
    let moved = dir.path().join("elsewhere.toml");
    fs::copy(first.join("manifest.toml"), &moved).unwrap();
    let second = dir.path().join("second");
    let out = crmopo(&["run", moved.to_str().unwrap(), "-o", second.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(
        fs::read(first.join("trace_seed4.csv")).unwrap(),
        fs::read(second.join("trace_seed4.csv")).unwrap()
    );
}

#[test]
fn oracle_disabled_omits_gap_fields() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");
    let out = crmopo(&[
        "run",
        fixture("flip_chain_experiment.toml").to_str().unwrap(),
        "-o",
        out_dir.to_str().unwrap(),
        "--seeds",
        "0",
        "--horizon",
        "20",
        "--no-oracle",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = fs::read_to_string(out_dir.join("summary.toml")).unwrap();
    assert!(!text.contains("gap"), "{text}");
}

#[test]
fn unwritable_output_directory_fails_before_running() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    fs::write(&blocker, "not a directory").unwrap();
    let target = blocker.join("out");
    let out = crmopo(&[
        "run",
        fixture("flip_chain_experiment.toml").to_str().unwrap(),
        "-o",
        target.to_str().unwrap(),
    ]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("output directory"), "{}", stderr(&out));
    assert!(!target.exists());
}

#[test]
fn environment_selects_default_output_directory() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_crmopo"))
        .args([
            "run",
            fixture("flip_chain_experiment.toml").to_str().unwrap(),
            "--seeds",
            "1",
            "--horizon",
            "5",
            "--no-oracle",
        ])
        .env("CRMOPO_OUT_DIR", dir.path())
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(dir.path().join("trace_seed1.csv").exists());
    assert!(dir.path().join("manifest.toml").exists());
}
