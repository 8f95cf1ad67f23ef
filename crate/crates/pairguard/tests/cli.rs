//! Black-box tests of the pairguard binary: exit codes, file outputs, and
//! the seed/env precedence rules. Fixtures live in tests/fixtures.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn pairguard(args: &[&str]) -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_pairguard"));
    cmd.args(args);
    cmd.env_remove("PAIRGUARD_SEED");
    cmd
}

fn run(cmd: &mut Command) -> Output {
    cmd.output().expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn read(path: &Path) -> String {
    fs::read_to_string(path).unwrap_or_else(|e| panic!("read {}: {e}", path.display()))
}

fn seed_in_metadata(dir: &Path) -> u64 {
    let meta: serde_json::Value =
        serde_json::from_str(&read(&dir.join("run_metadata.json"))).unwrap();
    meta["settings"]["seed"].as_u64().unwrap()
}

#[test]
fn evaluate_writes_the_expected_summary() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(pairguard(&["evaluate", "--input"])
        .arg(fixture("sample_run_log.csv"))
        .arg("--out")
        .arg(dir.path()));
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr(&out));
    let summary = read(&dir.path().join("summary.csv"));
    assert!(summary.starts_with("# config_digest="));
    assert!(summary.contains(
        "dataset,scenario,type,delta_single,delta_paired,ci_low,ci_high,p_perm,p_unpaired,decision"
    ));
    assert!(summary.contains("demo,S0,no-improve,0.00,0.00,0.00,0.00,1.00,1.00,not_significant"));
    assert!(summary.contains("demo,S1,small gain,0.50,1.00,0.50,1.50,0.25,0.22,not_significant"));
    assert!(dir.path().join("fig_effect_sizes.csv").exists());
    assert!(dir.path().join("fig_pvalues.csv").exists());
    assert!(dir.path().join("run_metadata.json").exists());
}

#[test]
fn reruns_are_byte_identical_including_curve_files() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out_dir in [&a, &b] {
        let out = run(pairguard(&["evaluate", "--input"])
            .arg(fixture("sample_run_log.csv"))
            .arg("--epochs")
            .arg(fixture("sample_epoch_log.csv"))
            .arg("--out")
            .arg(out_dir));
        assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr(&out));
    }
    for name in ["summary.csv", "fig_effect_sizes.csv", "fig_pvalues.csv", "fig_curves_demo_S1.csv"]
    {
        assert_eq!(
            fs::read(a.join(name)).unwrap(),
            fs::read(b.join(name)).unwrap(),
            "{name} differs between identical runs"
        );
    }
}

#[test]
fn lenient_alpha_and_exhaustive_perm_flip_the_decision() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(pairguard(&["evaluate", "--alpha", "0.3", "--perm", "exhaustive", "--input"])
        .arg(fixture("sample_run_log.csv"))
        .arg("--out")
        .arg(dir.path()));
    assert_eq!(out.status.code(), Some(0));
    let summary = read(&dir.path().join("summary.csv"));
    let s1 = summary.lines().find(|l| l.starts_with("demo,S1")).unwrap();
    assert!(s1.ends_with(",significant"), "expected a significant call, got: {s1}");
    let s0 = summary.lines().find(|l| l.starts_with("demo,S0")).unwrap();
    assert!(s0.ends_with(",not_significant"));
}

#[test]
fn unpaired_seed_is_a_finding_with_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("runs.csv");
    let mut text = read(&fixture("sample_run_log.csv"));
    text.push_str("demo,S1,4,variant,accuracy,93.0\n");
    fs::write(&input, text).unwrap();

    let out_dir = dir.path().join("out");
    let out = run(pairguard(&["evaluate", "--input"])
        .arg(&input)
        .arg("--out")
        .arg(&out_dir));
    assert_eq!(out.status.code(), Some(2));
    assert!(stdout(&out).contains("seed 4 is missing its partner run"));
    assert!(out_dir.join("summary.csv").exists(), "findings still produce outputs");

    let out = run(pairguard(&["evaluate", "--warn-only", "--input"])
        .arg(&input)
        .arg("--out")
        .arg(dir.path().join("out2")));
    assert_eq!(out.status.code(), Some(0), "--warn-only downgrades findings");
}

#[test]
fn missing_input_is_a_named_hard_failure() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(pairguard(&["evaluate", "--input", "/nonexistent/runs.csv", "--out"])
        .arg(dir.path()));
    assert_eq!(out.status.code(), Some(1));
    let err = stderr(&out);
    assert!(err.starts_with("error: "), "diagnostic, not a stack trace: {err}");
    assert!(err.contains("/nonexistent/runs.csv"));
    assert!(!err.contains("panicked"));
}

#[test]
fn usage_errors_exit_1_and_help_exits_0() {
    let out = run(&mut pairguard(&["evaluate", "--frobnicate"]));
    assert_eq!(out.status.code(), Some(1));
    let out = run(&mut pairguard(&["--help"]));
    assert_eq!(out.status.code(), Some(0));
    assert!(stdout(&out).contains("evaluate"));
}

#[test]
fn seed_comes_from_flag_then_env_then_default() {
    let dir = tempfile::tempdir().unwrap();
    let base = ["evaluate", "--input"];

    let flag_dir = dir.path().join("flag");
    let out = run(pairguard(&base)
        .arg(fixture("sample_run_log.csv"))
        .args(["--seed", "9", "--out"])
        .arg(&flag_dir)
        .env("PAIRGUARD_SEED", "123"));
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(seed_in_metadata(&flag_dir), 9, "--seed beats the env var");

    let env_dir = dir.path().join("env");
    let out = run(pairguard(&base)
        .arg(fixture("sample_run_log.csv"))
        .arg("--out")
        .arg(&env_dir)
        .env("PAIRGUARD_SEED", "123"));
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(seed_in_metadata(&env_dir), 123);

    let default_dir = dir.path().join("default");
    let out = run(pairguard(&base)
        .arg(fixture("sample_run_log.csv"))
        .arg("--out")
        .arg(&default_dir));
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(seed_in_metadata(&default_dir), 42);

    let out = run(pairguard(&base)
        .arg(fixture("sample_run_log.csv"))
        .arg("--out")
        .arg(dir.path().join("bad"))
        .env("PAIRGUARD_SEED", "pony"));
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("PAIRGUARD_SEED"));
}

#[test]
fn simulate_prints_rejection_headlines_and_writes_the_sweep() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = dir.path().join("null.scenario");
    fs::write(
        &scenario,
        "true_delta = 0.0\nk = 6\ntrials = 40\nschemes = paired_strict\nmaster_seed = 7\n",
    )
    .unwrap();
    let out_dir = dir.path().join("out");
    let out = run(pairguard(&["simulate", "--bootstrap", "300", "--perm", "199", "--scenario"])
        .arg(&scenario)
        .arg("--out")
        .arg(&out_dir));
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr(&out));
    let text = stdout(&out);
    let headline = text
        .lines()
        .find(|l| l.contains("paired_strict rejections: "))
        .unwrap_or_else(|| panic!("headline missing from: {text}"));
    assert!(headline.starts_with("k=6 true_delta=0 rho=0.9 shape=gaussian"));
    assert!(headline.ends_with("/40"));
    let sweep = read(&out_dir.join("sweep.csv"));
    assert!(sweep.starts_with("k,true_delta,rho,shape,scheme,rejection_rate,se,trials\n"));
    assert_eq!(sweep.lines().count(), 2);
}

#[test]
fn unknown_scenario_key_fails_with_a_suggestion() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = dir.path().join("typo.scenario");
    fs::write(&scenario, "trails = 9\n").unwrap();
    let out = run(pairguard(&["simulate", "--scenario"])
        .arg(&scenario)
        .arg("--out")
        .arg(dir.path().join("out")));
    assert_eq!(out.status.code(), Some(1));
    let err = stderr(&out);
    assert!(err.contains("did you mean \"trials\"?"), "got: {err}");
    assert!(err.contains("valid keys:"));
}

#[test]
fn validate_reports_pairing_and_writes_the_json_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(pairguard(&["validate", "--input"])
        .arg(fixture("sample_run_log.csv"))
        .arg("--out")
        .arg(dir.path()));
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    assert!(text.contains("demo/S0/accuracy: 3 seeds paired, 0 issues"));
    assert!(text.contains("demo/S1/accuracy: 3 seeds paired, 0 issues"));
    assert!(text.contains("6 seeds paired, 0 issues"));
    let report: serde_json::Value =
        serde_json::from_str(&read(&dir.path().join("pairing_report.json"))).unwrap();
    assert_eq!(report["groups"].as_array().unwrap().len(), 2);
}

#[test]
fn epoch_final_value_mismatch_is_a_finding() {
    let dir = tempfile::tempdir().unwrap();
    let epochs = dir.path().join("epochs.csv");
    let tampered = read(&fixture("sample_epoch_log.csv")).replace(
        "demo,S1,1,variant,3,90.5",
        "demo,S1,1,variant,3,99.9",
    );
    fs::write(&epochs, tampered).unwrap();
    let out = run(pairguard(&["validate", "--input"])
        .arg(fixture("sample_run_log.csv"))
        .arg("--epochs")
        .arg(&epochs));
    assert_eq!(out.status.code(), Some(2));
    assert!(stdout(&out).contains("matches no run-log value"));
}

#[test]
fn report_rerenders_stored_statistics_unchanged() {
    let dir = tempfile::tempdir().unwrap();
    let eval_dir = dir.path().join("eval");
    let out = run(pairguard(&["evaluate", "--format", "md", "--input"])
        .arg(fixture("sample_run_log.csv"))
        .arg("--out")
        .arg(&eval_dir));
    assert_eq!(out.status.code(), Some(0));
    let eval_csv_dir = dir.path().join("eval_csv");
    let out = run(pairguard(&["evaluate", "--input"])
        .arg(fixture("sample_run_log.csv"))
        .arg("--out")
        .arg(&eval_csv_dir));
    assert_eq!(out.status.code(), Some(0));

    let report_dir = dir.path().join("report");
    let out = run(pairguard(&["report", "--input"])
        .arg(eval_csv_dir.join("summary.csv"))
        .arg("--out")
        .arg(&report_dir));
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr(&out));
    assert_eq!(
        read(&report_dir.join("summary.md")),
        read(&eval_dir.join("summary.md")),
        "report must re-render the same table evaluate produced"
    );
    assert_eq!(
        read(&report_dir.join("fig_effect_sizes.csv")),
        read(&eval_csv_dir.join("fig_effect_sizes.csv"))
    );
}

#[test]
fn scale_flag_multiplies_ingested_values() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("fractions.csv");
    fs::write(
        &input,
        "dataset,scenario,seed,arm,metric,value\n\
         demo,S1,1,baseline,accuracy,0.900\n\
         demo,S1,1,variant,accuracy,0.905\n\
         demo,S1,2,baseline,accuracy,0.905\n\
         demo,S1,2,variant,accuracy,0.915\n\
         demo,S1,3,baseline,accuracy,0.910\n\
         demo,S1,3,variant,accuracy,0.925\n",
    )
    .unwrap();
    let out = run(pairguard(&["evaluate", "--scale", "100", "--input"])
        .arg(&input)
        .arg("--out")
        .arg(dir.path().join("out")));
    assert_eq!(out.status.code(), Some(0));
    let summary = read(&dir.path().join("out/summary.csv"));
    assert!(
        summary.contains("demo,S1,small gain,0.50,1.00,0.50,1.50,0.25,0.22,not_significant"),
        "scaled rows should match the percent-valued fixture: {summary}"
    );
}
