//! Finite signals induced by a plan, and the feasibility checks that make a
//! computed policy auditable.
//!
//! The type space is cut into `n` uniform cells with exact prior masses.
//! Revealed cells keep their conditional mean as both type and signal. A
//! pooled cell becomes one signal column whose mean interval is the image of
//! the cell under the matching curve; the cost-matched types whose costs
//! land in that interval join the same column. Aggregating the pair into one
//! column is what keeps the mean (martingale) constraint at the quadrature
//! level instead of the cell-width level: each column's mean residual comes
//! only from curve accuracy, not from snapping types to cell centers.

use crate::error::{Error, Result};
use crate::market::MarketInstance;
use crate::quad;
use crate::signal::{Objective, Segment, SignalPlan};

/// One mass atom of a finite signal: type-cell `row` sends `mass` to signal
/// column `col`; `theta` and `x` are the atom's exact conditional type and
/// assigned mean.
#[derive(Clone, Debug)]
pub struct SignalEntry {
    pub row: usize,
    pub col: usize,
    pub theta: f64,
    pub x: f64,
    pub mass: f64,
}

/// A finite signal over a row partition of the type space.
#[derive(Clone, Debug)]
pub struct DiscreteSignal {
    /// Conditional mean type of each row cell.
    pub row_theta: Vec<f64>,
    /// Exact prior mass of each row cell.
    pub row_mass: Vec<f64>,
    /// Representative mean of each signal column.
    pub x_reps: Vec<f64>,
    pub entries: Vec<SignalEntry>,
    /// Half the type-cell width (0 for explicitly discrete markets); used
    /// as the participation slack absorbed by cell aggregation.
    pub halfcell: f64,
}

impl DiscreteSignal {
    /// Wrap an explicitly discrete signal: `rows` are `(type, mass)` atoms,
    /// `entries` are `(row, mean, mass)` assignments. Columns are formed by
    /// grouping identical means.
    pub fn from_support(rows: Vec<(f64, f64)>, entries: Vec<(usize, f64, f64)>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::InvalidInstance("discrete signal needs at least one row".into()));
        }
        let mut x_reps: Vec<f64> = Vec::new();
        let mut out = Vec::new();
        for &(row, x, mass) in &entries {
            if row >= rows.len() {
                return Err(Error::InvalidInstance(format!("entry row {row} out of range")));
            }
            if !(mass > 0.0) {
                return Err(Error::InvalidInstance(format!("entry mass {mass} is not positive")));
            }
            let col = match x_reps.iter().position(|&v| (v - x).abs() < 1e-12) {
                Some(c) => c,
                None => {
                    x_reps.push(x);
                    x_reps.len() - 1
                }
            };
            out.push(SignalEntry { row, col, theta: rows[row].0, x, mass });
        }
        out.sort_by(|a, b| (a.row, a.col).cmp(&(b.row, b.col)));
        Ok(DiscreteSignal {
            row_theta: rows.iter().map(|r| r.0).collect(),
            row_mass: rows.iter().map(|r| r.1).collect(),
            x_reps,
            entries: out,
            halfcell: 0.0,
        })
    }

    pub fn num_rows(&self) -> usize {
        self.row_theta.len()
    }

    pub fn num_cols(&self) -> usize {
        self.x_reps.len()
    }
}

/// Worst-case constraint residuals of a finite signal.
#[derive(Clone, Copy, Debug)]
pub struct FeasibilityReport {
    /// Max over rows of |row mass sent - row prior mass|.
    pub bp_residual: f64,
    /// Max over columns of |sum of (x - theta) mass|: the mean constraint.
    pub m_residual: f64,
    /// Largest single mass asked to sell below its reservation value
    /// (beyond the half-cell aggregation slack).
    pub pm_residual: f64,
    pub pm_violations: usize,
}

impl FeasibilityReport {
    pub fn feasible_within(&self, tol: f64) -> bool {
        self.bp_residual <= tol && self.m_residual <= tol && self.pm_violations == 0
    }
}

/// Audit a finite signal against the prior and the participation bound.
pub fn check_feasibility(ds: &DiscreteSignal, inst: &MarketInstance) -> FeasibilityReport {
    let mut row_sums = vec![0.0; ds.num_rows()];
    let mut col_defect = vec![0.0; ds.num_cols()];
    let mut pm_residual: f64 = 0.0;
    let mut pm_violations = 0;
    for e in &ds.entries {
        row_sums[e.row] += e.mass;
        col_defect[e.col] += (e.x - e.theta) * e.mass;
        if inst.aux_cost(e.theta) > e.x + ds.halfcell + 1e-12 {
            pm_violations += 1;
            pm_residual = pm_residual.max(e.mass);
        }
    }
    let bp_residual = row_sums
        .iter()
        .zip(&ds.row_mass)
        .map(|(s, m)| (s - m).abs())
        .fold(0.0f64, f64::max);
    let m_residual = col_defect.iter().map(|d| d.abs()).fold(0.0f64, f64::max);
    FeasibilityReport { bp_residual, m_residual, pm_residual, pm_violations }
}

/// Objective value of a finite signal, both ways.
#[derive(Clone, Copy, Debug)]
pub struct ObjectiveEval {
    /// Collapsed type-weight form.
    pub theta_form: f64,
    /// Through realized means (prices).
    pub x_form: f64,
}

/// Evaluate the objective on a finite signal. An atom trades when its cost
/// clears its assigned mean. Because atoms carry conditional means rather
/// than cell centers, the only play in that comparison is curvature over a
/// cell (Jensen gaps of order cell-width squared), so the slack is
/// quadratic in the cell width; a half-cell slack would let revealed
/// inefficient types near a crossing count as trading.
pub fn evaluate_objective(ds: &DiscreteSignal, inst: &MarketInstance, objective: &Objective) -> ObjectiveEval {
    let w = objective.theta_weight(inst);
    let slack = 8.0 * ds.halfcell * ds.halfcell + 1e-12;
    let mut theta_form = 0.0;
    let mut x_form = 0.0;
    for e in &ds.entries {
        if inst.c(e.theta) <= e.x + slack {
            theta_form += w.eval(e.theta) * e.mass;
            x_form += objective.trade_value(inst, e.theta, e.x) * e.mass;
        }
    }
    ObjectiveEval { theta_form, x_form }
}

struct Builder {
    edges: Vec<f64>,
    x_reps: Vec<f64>,
    entries: Vec<SignalEntry>,
}

impl Builder {
    /// Cells of `[lo, hi]` cut at row edges: `(row, piece_lo, piece_hi)`.
    fn pieces(&self, lo: f64, hi: f64) -> Vec<(usize, f64, f64)> {
        let n = self.edges.len() - 1;
        let first = ((lo * n as f64).floor() as usize).min(n - 1);
        let mut out = Vec::new();
        let mut row = first;
        while row < n && self.edges[row] < hi - 1e-15 {
            let a = self.edges[row].max(lo);
            let b = self.edges[row + 1].min(hi);
            if b - a > 1e-13 {
                out.push((row, a, b));
            }
            row += 1;
        }
        out
    }

    fn new_col(&mut self, x_rep: f64) -> usize {
        self.x_reps.push(x_rep);
        self.x_reps.len() - 1
    }

    fn push(&mut self, row: usize, col: usize, theta: f64, x: f64, mass: f64) {
        if mass > 0.0 {
            self.entries.push(SignalEntry { row, col, theta, x, mass });
        }
    }
}

/// Discretize a plan into `n` uniform type cells.
pub fn discretize(inst: &MarketInstance, plan: &SignalPlan, n: usize) -> Result<DiscreteSignal> {
    if n < 2 {
        return Err(Error::InvalidInstance(format!("cell count {n} too small")));
    }
    let density = inst.density();
    let cost = inst.cost();
    let edges: Vec<f64> = (0..=n).map(|k| k as f64 / n as f64).collect();
    let mut b = Builder { edges, x_reps: Vec::new(), entries: Vec::new() };

    // Pool columns pending their cost-matched counterpart: the column id and
    // the cost preimage of its mean interval.
    let mut pending: Vec<(usize, f64, f64)> = Vec::new();

    for seg in &plan.segments {
        match seg {
            Segment::Reveal { lo, hi } => {
                for (row, a, z) in b.pieces(*lo, *hi) {
                    let mass = density.integral(a, z);
                    let theta = density.mean(a, z);
                    let col = b.new_col(theta);
                    b.push(row, col, theta, theta, mass);
                }
            }
            Segment::Pool { lo, hi, curve } => {
                for (row, a, z) in b.pieces(*lo, *hi) {
                    let mass = density.integral(a, z);
                    if mass <= 0.0 {
                        continue;
                    }
                    let theta = density.mean(a, z);
                    let x_mean =
                        quad::gauss(&|t: f64| curve.mean_at(t) * density.eval(t), a, z) / mass;
                    let col = b.new_col(x_mean);
                    b.push(row, col, theta, x_mean, mass);
                    // Mean interval of this cell piece: curve is decreasing.
                    let x_lo = curve.mean_at(z);
                    let x_hi = curve.mean_at(a);
                    pending.push((
                        col,
                        inst.cost_inverse_clamped(x_lo),
                        inst.cost_inverse_clamped(x_hi),
                    ));
                }
            }
            Segment::CostMatch { .. } => {}
        }
    }

    // Attach cost-matched types to their pool columns, segment by segment.
    // Within a segment the preimages abut by construction; walking a cursor
    // and snapping each piece to it makes the tiling exact, so the row
    // masses add up to the prior exactly.
    for seg in &plan.segments {
        let Segment::CostMatch { lo, hi } = seg else { continue };
        let mut mine: Vec<(usize, f64, f64)> = pending
            .iter()
            .copied()
            .filter(|(_, plo, phi)| {
                let mid = 0.5 * (plo + phi);
                mid >= *lo - 1e-9 && mid <= *hi + 1e-9
            })
            .collect();
        if mine.is_empty() {
            return Err(Error::InvalidInstance(format!(
                "cost-match segment [{lo:.6}, {hi:.6}] has no pooled counterpart"
            )));
        }
        mine.sort_by(|p, q| p.1.partial_cmp(&q.1).unwrap());
        let mut cursor = *lo;
        for (k, (col, plo, phi)) in mine.iter().enumerate() {
            if (plo - cursor).abs() > 1e-6 {
                return Err(Error::InvalidInstance(format!(
                    "cost-match tiling gap: expected {cursor:.9}, next preimage starts {plo:.9}"
                )));
            }
            let piece_hi = if k + 1 == mine.len() { *hi } else { *phi };
            if piece_hi <= cursor {
                continue;
            }
            for (row, a, z) in b.pieces(cursor, piece_hi) {
                let mass = density.integral(a, z);
                if mass <= 0.0 {
                    continue;
                }
                let theta = density.mean(a, z);
                let x = cost.product_integral(density, a, z) / mass;
                b.push(row, *col, theta, x, mass);
            }
            cursor = piece_hi;
        }
    }

    let row_mass: Vec<f64> = (0..n).map(|i| density.integral(b.edges[i], b.edges[i + 1])).collect();
    let row_theta: Vec<f64> = (0..n).map(|i| density.mean(b.edges[i], b.edges[i + 1])).collect();
    let mut entries = b.entries;
    entries.sort_by(|p, q| (p.row, p.col).cmp(&(q.row, q.col)));
    Ok(DiscreteSignal {
        row_theta,
        row_mass,
        x_reps: b.x_reps,
        entries,
        halfcell: 0.5 / n as f64,
    })
}
