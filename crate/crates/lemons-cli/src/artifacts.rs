//! Deterministic artifact writers: versioned CSV tables, the JSON report,
//! and the oracle linear program in LP text interchange format.
//!
//! Every table starts with a `# schema=1` comment line. Floats are written
//! in Rust's shortest round-trip form, so identical runs produce
//! byte-identical files; nothing time- or environment-dependent is emitted.

use std::fmt::Write as _;
use std::path::Path;

use anyhow::{Context, Result};
use lemons_core::{DualCertificate, LpProblem, LpSolution, MarketInstance, SignalPlan};

use crate::Report;

fn write_file(out: &Path, name: &str, body: String) -> Result<()> {
    let path = out.join(name);
    std::fs::write(&path, body).with_context(|| format!("writing {}", path.display()))
}

pub fn write_report(out: &Path, report: &Report) -> Result<()> {
    // Failure paths land here before the directory may exist.
    std::fs::create_dir_all(out)
        .with_context(|| format!("creating output directory {}", out.display()))?;
    let mut text = serde_json::to_string_pretty(report).context("serializing report")?;
    text.push('\n');
    write_file(out, "report.json", text)
}

/// Type-to-mean assignment per segment, sampled on a fixed per-segment grid.
pub fn write_plan_csv(out: &Path, inst: &MarketInstance, plan: &SignalPlan) -> Result<()> {
    let mut body = String::from("# schema=1\ntheta,x,segment\n");
    for seg in &plan.segments {
        for k in 0..=200u32 {
            let t = seg.lo() + (seg.hi() - seg.lo()) * f64::from(k) / 200.0;
            let x = seg.assignment(inst, t);
            let _ = writeln!(body, "{t},{x},{}", seg.kind_name());
        }
    }
    write_file(out, "plan.csv", body)
}

/// Raw matching-curve samples `(x, a(x), a'(x))`, one block per pool.
pub fn write_curves_csv(out: &Path, plan: &SignalPlan) -> Result<()> {
    let mut body = String::from("# schema=1\ncurve,x,a,slope\n");
    for (i, curve) in plan.pool_curves().into_iter().enumerate() {
        for (x, a, slope) in curve.samples() {
            let _ = writeln!(body, "{i},{x},{a},{slope}");
        }
    }
    write_file(out, "curves.csv", body)
}

/// Certificate samples: the type weight `w` over `[0, 1]` alongside the
/// multipliers `q` and `m` at the same coordinate read as a mean.
pub fn write_dual_csv(out: &Path, inst: &MarketInstance, cert: &DualCertificate) -> Result<()> {
    let mut body = String::from("# schema=1\nt,w,q,m\n");
    for (t, w, q, m) in cert.sample_rows(inst, 1000) {
        let _ = writeln!(body, "{t},{w},{q},{m}");
    }
    write_file(out, "dual.csv", body)
}

/// Carried cells of the oracle optimum.
pub fn write_lp_solution_csv(out: &Path, sol: &LpSolution) -> Result<()> {
    let mut body = String::from("# schema=1\ni,j,theta,x,mass\n");
    for e in &sol.entries {
        let _ = writeln!(body, "{},{},{},{},{}", e.row, e.col, e.theta, e.x, e.mass);
    }
    write_file(out, "lp_solution.csv", body)
}

/// The assembled oracle LP in text interchange format: maximization
/// objective, equality rows (row masses and mean balances), default
/// nonnegative bounds. Suitable for cross-checking with external solvers.
pub fn write_lp_text(out: &Path, lp: &LpProblem) -> Result<()> {
    let mut body = String::from("\\ oracle transport LP (schema 1)\nMaximize\n obj:");
    let mut terms = 0usize;
    for (k, &(i, j)) in lp.vars.iter().enumerate() {
        let c = lp.objective[k];
        if c == 0.0 {
            continue;
        }
        push_term(&mut body, &mut terms, c, i, j);
    }
    if terms == 0 {
        body.push_str(" 0 pi_0_0");
    }
    body.push_str("\nSubject To\n");

    for (i, &mass) in lp.masses.iter().enumerate() {
        let _ = write!(body, " bp_{i}:");
        let mut terms = 0usize;
        for &(vi, vj) in lp.vars.iter().filter(|&&(vi, _)| vi == i) {
            push_term(&mut body, &mut terms, 1.0, vi, vj);
        }
        let _ = writeln!(body, " = {mass}");
    }
    for &j in &lp.mean_rows {
        let _ = write!(body, " mean_{j}:");
        let mut terms = 0usize;
        for &(vi, vj) in lp.vars.iter().filter(|&&(_, vj)| vj == j) {
            let coeff = lp.x_grid[j] - lp.types[vi];
            if coeff != 0.0 {
                push_term(&mut body, &mut terms, coeff, vi, vj);
            }
        }
        body.push_str(" = 0\n");
    }
    body.push_str("End\n");
    write_file(out, "model.lp", body)
}

/// Appends `± c pi_i_j`, folding the sign into the separator and wrapping
/// lines to stay within conventional LP-format line lengths.
fn push_term(body: &mut String, terms: &mut usize, c: f64, i: usize, j: usize) {
    if *terms > 0 && *terms % 8 == 0 {
        body.push_str("\n   ");
    }
    let sep = if *terms == 0 { " " } else if c < 0.0 { " - " } else { " + " };
    let mag = if *terms == 0 { c } else { c.abs() };
    let _ = write!(body, "{sep}{mag} pi_{i}_{j}");
    *terms += 1;
}
