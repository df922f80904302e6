//! End-to-end tests of the `lemons` binary: exit codes, the always-written
//! report, and byte-level determinism of the exported tables.

use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn lemons(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lemons"))
        .args(args)
        .env_remove("LEMONS_OUT")
        .output()
        .expect("spawning the lemons binary")
}

fn report(dir: &Path) -> Value {
    let text = std::fs::read_to_string(dir.join("report.json")).expect("report.json exists");
    serde_json::from_str(&text).expect("report.json parses")
}

fn num(v: &Value, key: &str) -> f64 {
    v[key].as_f64().unwrap_or_else(|| panic!("{key} missing from report: {v}"))
}

/// The canonical uniform/affine market in the file format the binary loads.
const CANONICAL: &str = "\
[density]
breakpoints = [0.0, 1.0]
coefficients = [[1.0]]

[cost]
breakpoints = [0.0, 1.0]
coefficients = [[0.25, 0.5]]
";

#[test]
fn analyze_runs_the_whole_pipeline_on_a_market_file() {
    let tmp = tempfile::tempdir().unwrap();
    let market = tmp.path().join("market.toml");
    std::fs::write(&market, CANONICAL).unwrap();
    let out = tmp.path().join("out");

    let run = lemons(&["analyze", market.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(run.status.success(), "stderr: {}", String::from_utf8_lossy(&run.stderr));

    let r = report(&out);
    assert_eq!(r["status"], "ok");
    assert!((num(&r["extras"], "theta_star") - 0.5).abs() <= 1e-10);
    assert!((num(&r["extras"], "theta_lower") - 0.25).abs() <= 1e-6);
    assert!((num(&r, "primal_value") - 0.75).abs() <= 1e-6);
    assert!(num(&r, "gap").abs() <= 1e-6);
    assert!(num(&r, "zp_min_slack") >= -1e-7);
    assert!(num(&r, "support_max_slack") <= 1e-6);
    assert!(num(&r, "m_residual") <= 1e-6);

    for file in ["plan.csv", "curves.csv", "dual.csv", "lp_solution.csv"] {
        let text = std::fs::read_to_string(out.join(file)).unwrap();
        assert!(text.starts_with("# schema=1\n"), "{file} lacks the schema header");
    }
}

#[test]
fn assumption_failure_exits_two_and_still_reports() {
    // A low flat-ish cost curve lets the whole market trade at once, so no
    // construction applies; the run must fail with code 2 and say why.
    let tmp = tempfile::tempdir().unwrap();
    let market = tmp.path().join("market.toml");
    std::fs::write(
        &market,
        "\
[density]
breakpoints = [0.0, 1.0]
coefficients = [[1.0]]

[cost]
breakpoints = [0.0, 1.0]
coefficients = [[0.08, 0.2]]
",
    )
    .unwrap();
    let out = tmp.path().join("out");

    let run = lemons(&["analyze", market.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(run.status.code(), Some(2));

    let r = report(&out);
    assert_eq!(r["status"], "assumption-failure");
    assert!(r["failure"].as_str().unwrap().contains("full trade"));
}

#[test]
fn usage_errors_exit_one_not_two() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let run = lemons(&["analyze", "canon", "--n", "5", "--out", out.to_str().unwrap()]);
    assert_eq!(run.status.code(), Some(1));
    assert_eq!(report(&out)["status"], "error");
}

#[test]
fn exported_tables_are_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for dir in [&a, &b] {
        let run = lemons(&["certify", "canon", "--out", dir.to_str().unwrap()]);
        assert!(run.status.success(), "stderr: {}", String::from_utf8_lossy(&run.stderr));
    }
    for file in ["plan.csv", "curves.csv", "dual.csv", "report.json"] {
        let left = std::fs::read(a.join(file)).unwrap();
        let right = std::fs::read(b.join(file)).unwrap();
        assert_eq!(left, right, "{file} differs between identical runs");
    }
}

#[test]
fn discrete_market_scores_its_reference_signal_against_the_oracle() {
    // Two types with a hand-specified signal: the oracle tops out at 1/2
    // while the reference trades 5/12 of the market, and its residuals are
    // recorded as the run's feasibility numbers.
    let tmp = tempfile::tempdir().unwrap();
    let market = tmp.path().join("market.toml");
    std::fs::write(
        &market,
        "\
[discrete]
types = [0.0, 1.0]
masses = [0.75, 0.25]
costs = [0.125, 0.5]
theta_star = 0.2
signal = [
  { row = 0, x = 0.0, mass = 0.5833333333333334 },
  { row = 0, x = 0.5, mass = 0.16666666666666666 },
  { row = 1, x = 0.5, mass = 0.16666666666666666 },
  { row = 1, x = 1.0, mass = 0.08333333333333333 },
]
",
    )
    .unwrap();
    let out = tmp.path().join("out");

    let run = lemons(&["oracle", market.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(run.status.success(), "stderr: {}", String::from_utf8_lossy(&run.stderr));

    let r = report(&out);
    assert!((num(&r["extras"], "lp_value") - 0.5).abs() <= 1e-9);
    assert!((num(&r, "primal_value") - 5.0 / 12.0).abs() <= 1e-9);
    assert!(num(&r, "bp_residual") <= 1e-9);
    assert!(num(&r, "m_residual") <= 1e-9);
    assert!(num(&r, "pm_residual") <= 1e-9);
}

#[test]
fn bottom_gains_collapse_to_full_revelation_with_a_note() {
    let tmp = tempfile::tempdir().unwrap();
    let market = tmp.path().join("market.toml");
    std::fs::write(
        &market,
        "\
regime = \"gains-at-bottom\"

[density]
breakpoints = [0.0, 1.0]
coefficients = [[1.0]]

[cost]
breakpoints = [0.0, 1.0]
coefficients = [[0.0, 0.5, 1.0]]
",
    )
    .unwrap();
    let out = tmp.path().join("out");

    let run = lemons(&["verify", market.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(run.status.success(), "stderr: {}", String::from_utf8_lossy(&run.stderr));

    let r = report(&out);
    assert_eq!(r["extras"]["plan_label"], "full-reveal");
    assert_eq!(r["extras"]["note"], "full revelation is optimal for this regime");
    assert!((num(&r, "primal_value") - 0.5).abs() <= 1e-9);
}

#[test]
fn output_directory_falls_back_to_the_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("from-env");
    let run = Command::new(env!("CARGO_BIN_EXE_lemons"))
        .args(["build-signal", "canon"])
        .env("LEMONS_OUT", &out)
        .output()
        .expect("spawning the lemons binary");
    assert!(run.status.success(), "stderr: {}", String::from_utf8_lossy(&run.stderr));
    assert_eq!(report(&out)["status"], "ok");
}
