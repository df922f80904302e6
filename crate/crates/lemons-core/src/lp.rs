//! Independent finite oracle: a discretized martingale-transport LP.
//!
//! The continuum problem is checked against a linear program over a finite
//! type grid. Rows are type atoms (cells of the prior with their conditional
//! means and exact masses, or an explicitly discrete market); columns are
//! candidate posterior means. A variable `π(i, j)` carries mass of type `i`
//! at mean `x_j` and is admitted only when the participation cost
//! `ĉᵢ = min(θᵢ, c(θᵢ))` does not exceed `x_j`; each row must ship its whole
//! mass (Bayes consistency) and each column must balance `Σᵢ (x_j - θᵢ) π`
//! to zero (posterior means are prices). The objective credits a pair only
//! when the type actually trades at its column's price, `c(θᵢ) ≤ x_j`.
//!
//! The participation gate is kept tight (no half-cell slack): a relaxed gate
//! would let chains of barely-infeasible cells prop up extra trade near a
//! crossing and break the exact agreement with full revelation that the
//! no-pooling regimes are checked against. The gate can never starve a row,
//! because the diagonal pair `(θᵢ, θᵢ)` is always admissible.
//!
//! The solver is a dense revised simplex warm-started on that diagonal: the
//! diagonal variables cover the row constraints with exactly zero mean-row
//! coefficients, and zero-cost artificials cover the mean rows, so the
//! initial basis is the identity and no phase one is needed. Largest
//! reduced cost enters; after a long degenerate streak the pivot rule drops
//! to Bland's to rule out cycling. The basis inverse is refreshed from
//! scratch periodically and the reported solution is re-checked against the
//! row and mean constraints before it is returned.

use crate::discretize::SignalEntry;
use crate::error::{Error, Result};
use crate::market::MarketInstance;
use crate::signal::Objective;

/// Matching tolerance when collapsing nearly identical candidate means.
const MEAN_DEDUP: f64 = 1e-12;

/// Trade and participation gate tolerance (pure float-noise absorption).
const GATE_TOL: f64 = 1e-12;

/// A finite market: type atoms with masses and reservation costs.
#[derive(Clone, Debug)]
pub struct DiscreteMarket {
    /// Ascending type atoms (cell conditional means for discretized priors).
    pub types: Vec<f64>,
    /// Prior mass of each atom; sums to one.
    pub masses: Vec<f64>,
    /// Reservation cost of each atom.
    pub costs: Vec<f64>,
    /// Cost crossing of the underlying market (reporting only; the LP itself
    /// works from the costs).
    pub theta_star: f64,
    /// Half the type-cell width (zero for explicitly discrete markets).
    pub halfcell: f64,
}

impl DiscreteMarket {
    /// Discretizes a continuum instance into `n` uniform cells, each carrying
    /// its exact prior mass at its conditional mean type, with the cost
    /// evaluated at that mean.
    pub fn from_instance(inst: &MarketInstance, n: usize) -> Result<Self> {
        if !(2..=1000).contains(&n) {
            return Err(Error::InvalidInstance(format!(
                "oracle grid size {n} outside 2..=1000"
            )));
        }
        let mut types = Vec::with_capacity(n);
        let mut masses = Vec::with_capacity(n);
        let mut costs = Vec::with_capacity(n);
        for k in 0..n {
            let lo = k as f64 / n as f64;
            let hi = (k + 1) as f64 / n as f64;
            let mean = inst.mean(lo, hi);
            types.push(mean);
            masses.push(inst.cdf(hi) - inst.cdf(lo));
            costs.push(inst.c(mean));
        }
        let theta_star = inst.crossing_profile()?.first_crossing();
        Ok(DiscreteMarket { types, masses, costs, theta_star, halfcell: 0.5 / n as f64 })
    }

    /// Wraps an explicitly discrete market. Types must be strictly
    /// ascending in `[0, 1]` and masses must be a probability vector.
    pub fn from_parts(
        types: Vec<f64>,
        masses: Vec<f64>,
        costs: Vec<f64>,
        theta_star: f64,
    ) -> Result<Self> {
        if types.is_empty() || types.len() != masses.len() || types.len() != costs.len() {
            return Err(Error::InvalidInstance(
                "discrete market needs equal-length, nonempty types/masses/costs".into(),
            ));
        }
        if types.len() > 1000 {
            return Err(Error::InvalidInstance(format!(
                "discrete market with {} types exceeds the 1000-type oracle cap",
                types.len()
            )));
        }
        for w in types.windows(2) {
            if w[1] - w[0] <= MEAN_DEDUP {
                return Err(Error::InvalidInstance(format!(
                    "types must be strictly ascending; got {} then {}",
                    w[0], w[1]
                )));
            }
        }
        if types[0] < 0.0 || *types.last().unwrap() > 1.0 {
            return Err(Error::InvalidInstance("types must lie in [0, 1]".into()));
        }
        let total: f64 = masses.iter().sum();
        if masses.iter().any(|&m| !(m > 0.0)) || (total - 1.0).abs() > 1e-8 {
            return Err(Error::InvalidInstance(format!(
                "masses must be positive and sum to one (sum = {total})"
            )));
        }
        if costs.iter().any(|&c| !c.is_finite() || c < 0.0) {
            return Err(Error::InvalidInstance("costs must be finite and nonnegative".into()));
        }
        Ok(DiscreteMarket { types, masses, costs, theta_star, halfcell: 0.0 })
    }

    fn aux_cost(&self, i: usize) -> f64 {
        self.types[i].min(self.costs[i])
    }
}

fn objective_coefficient(objective: &Objective, theta: f64, cost: f64, x: f64) -> f64 {
    if cost > x + GATE_TOL {
        return 0.0;
    }
    match objective {
        Objective::Volume { alpha } => alpha.eval(theta),
        Objective::PriceSurplus { beta } => x - (1.0 - beta) * cost,
    }
}

/// The assembled LP: admissible `(type, mean)` variables, their objective
/// coefficients, and which columns carry a mean-balance row.
#[derive(Clone, Debug)]
pub struct LpProblem {
    pub types: Vec<f64>,
    pub masses: Vec<f64>,
    pub costs: Vec<f64>,
    /// Candidate posterior means: types, costs, and any extra means, merged.
    pub x_grid: Vec<f64>,
    /// Admissible variables as `(row, column)` pairs, row-major.
    pub vars: Vec<(usize, usize)>,
    /// Objective coefficient of each variable.
    pub objective: Vec<f64>,
    /// Columns with at least one nonzero mean coefficient; only these get a
    /// balance row (a lone diagonal cell balances trivially).
    pub mean_rows: Vec<usize>,
    /// Per row, the index of its diagonal variable (at `x = θᵢ`).
    diagonal: Vec<usize>,
}

/// Assembles the oracle LP for a discrete market. `extra_means` join the
/// candidate mean grid (the grid otherwise holds the types and the costs);
/// refining the grid can only improve the optimum.
pub fn build_lp(
    dm: &DiscreteMarket,
    objective: &Objective,
    extra_means: &[f64],
) -> Result<LpProblem> {
    // Candidate means: types first so every atom keeps an exactly-diagonal
    // column, then costs and extras that are not already represented.
    let mut x_grid = dm.types.clone();
    for &v in dm.costs.iter().chain(extra_means) {
        if !(0.0..=1.0).contains(&v) {
            continue;
        }
        if !x_grid.iter().any(|&u| (u - v).abs() <= MEAN_DEDUP) {
            x_grid.push(v);
        }
    }
    x_grid.sort_by(|a, b| a.partial_cmp(b).unwrap());

    let nt = dm.types.len();
    let mut vars = Vec::new();
    let mut objective_coeffs = Vec::new();
    let mut diagonal = vec![usize::MAX; nt];
    let mut has_offdiag = vec![false; x_grid.len()];
    for i in 0..nt {
        for (j, &x) in x_grid.iter().enumerate() {
            if dm.aux_cost(i) > x + GATE_TOL {
                continue;
            }
            if x == dm.types[i] {
                diagonal[i] = vars.len();
            } else {
                has_offdiag[j] = true;
            }
            vars.push((i, j));
            objective_coeffs.push(objective_coefficient(objective, dm.types[i], dm.costs[i], x));
        }
    }
    for (i, &d) in diagonal.iter().enumerate() {
        if d == usize::MAX {
            return Err(Error::InvalidInstance(format!(
                "type atom {i} lost its diagonal column"
            )));
        }
    }
    let mean_rows: Vec<usize> =
        (0..x_grid.len()).filter(|&j| has_offdiag[j]).collect();

    Ok(LpProblem {
        types: dm.types.clone(),
        masses: dm.masses.clone(),
        costs: dm.costs.clone(),
        x_grid,
        vars,
        objective: objective_coeffs,
        mean_rows,
        diagonal,
    })
}

/// An optimal transport plan for the oracle LP.
#[derive(Clone, Debug)]
pub struct LpSolution {
    /// Optimal objective value.
    pub value: f64,
    /// Carried variables with their masses, sorted by `(row, column)`.
    pub entries: Vec<SignalEntry>,
    pub iterations: usize,
    /// Largest row-mass residual of the reported plan.
    pub bp_residual: f64,
    /// Largest mean-balance residual of the reported plan.
    pub m_residual: f64,
}

/// Builds and solves the oracle LP with the default mean grid.
pub fn solve_lp(dm: &DiscreteMarket, objective: &Objective) -> Result<LpSolution> {
    build_lp(dm, objective, &[])?.solve()
}

/// Objective value of an explicit transport plan on a discrete market,
/// crediting each cell only where its type trades at its column's price.
pub fn evaluate_entries(dm: &DiscreteMarket, entries: &[SignalEntry], objective: &Objective) -> f64 {
    entries
        .iter()
        .map(|e| objective_coefficient(objective, dm.types[e.row], dm.costs[e.row], e.x) * e.mass)
        .sum()
}

impl LpProblem {
    /// Solves the assembled LP with the diagonal warm start.
    pub fn solve(&self) -> Result<LpSolution> {
        let nt = self.types.len();
        let nm = self.mean_rows.len();
        let m = nt + nm;
        let nv = self.vars.len();

        // Row index of each column's mean constraint, if it has one.
        let mut mean_row_of = vec![usize::MAX; self.x_grid.len()];
        for (k, &j) in self.mean_rows.iter().enumerate() {
            mean_row_of[j] = nt + k;
        }

        // Sparse constraint columns: structural variables have a row-mass
        // coefficient and possibly a mean coefficient; artificials cover the
        // mean rows of the identity warm start.
        let mut cols: Vec<Vec<(usize, f64)>> = Vec::with_capacity(nv + nm);
        for (k, &(i, j)) in self.vars.iter().enumerate() {
            let mut col = vec![(i, 1.0)];
            let coeff = self.x_grid[j] - self.types[i];
            if mean_row_of[j] != usize::MAX && coeff != 0.0 {
                col.push((mean_row_of[j], coeff));
            }
            debug_assert!(k == cols.len());
            cols.push(col);
        }
        for r in nt..m {
            cols.push(vec![(r, 1.0)]);
        }
        let cost_of = |v: usize| if v < nv { self.objective[v] } else { 0.0 };

        let mut rhs = vec![0.0; m];
        rhs[..nt].copy_from_slice(&self.masses);

        let mut basis: Vec<usize> = self.diagonal.clone();
        basis.extend(nv..nv + nm);
        let mut in_basis = vec![false; nv + nm];
        for &b in &basis {
            in_basis[b] = true;
        }
        let mut binv = identity(m);
        let mut x_b = rhs.clone();

        const MAX_ITERS: usize = 200_000;
        const REFRESH: usize = 512;
        const ENTER_TOL: f64 = 1e-9;
        let mut bland = false;
        let mut degenerate_streak = 0usize;
        let mut iterations = 0usize;
        loop {
            if iterations >= MAX_ITERS {
                return Err(Error::LpStalled(format!(
                    "no optimum within {MAX_ITERS} iterations"
                )));
            }
            if iterations > 0 && iterations % REFRESH == 0 {
                binv = refactor(&cols, &basis, m).ok_or_else(|| {
                    Error::LpStalled("basis became numerically singular".into())
                })?;
                x_b = mat_vec(&binv, &rhs, m);
            }

            // Simplex multipliers y = c_B B⁻¹.
            let mut y = vec![0.0; m];
            for (k, &b) in basis.iter().enumerate() {
                let cb = cost_of(b);
                if cb != 0.0 {
                    let row = &binv[k * m..(k + 1) * m];
                    for r in 0..m {
                        y[r] += cb * row[r];
                    }
                }
            }

            // Price the structural variables (artificials never re-enter).
            let mut entering = None;
            let mut best = ENTER_TOL;
            for v in 0..nv {
                if in_basis[v] {
                    continue;
                }
                let mut reduced = self.objective[v];
                for &(r, coeff) in &cols[v] {
                    reduced -= y[r] * coeff;
                }
                if reduced > best {
                    entering = Some(v);
                    if bland {
                        break;
                    }
                    best = reduced;
                }
            }
            let Some(e) = entering else { break };

            // Direction u = B⁻¹ A_e and the ratio test (ties to the smallest
            // basis variable, which together with Bland's entering rule
            // guarantees termination).
            let mut u = vec![0.0; m];
            for &(r, coeff) in &cols[e] {
                for k in 0..m {
                    u[k] += binv[k * m + r] * coeff;
                }
            }
            let mut leave: Option<usize> = None;
            let mut best_ratio = f64::INFINITY;
            for k in 0..m {
                let ratio = if u[k] > 1e-12 {
                    x_b[k].max(0.0) / u[k]
                } else if u[k] < -1e-12 && basis[k] >= nv {
                    // Artificials are fixed at zero: a direction that would
                    // lift one is blocked on the spot and expels it, so the
                    // mean rows stay genuine equalities.
                    0.0
                } else {
                    continue;
                };
                // Ties go to the smallest basis index under Bland's rule
                // (termination), otherwise to the largest pivot (stability).
                let better = match leave {
                    None => true,
                    Some(p) if bland => {
                        ratio < best_ratio - 1e-15
                            || (ratio <= best_ratio + 1e-15 && basis[k] < basis[p])
                    }
                    Some(p) => {
                        ratio < best_ratio - 1e-12
                            || (ratio <= best_ratio + 1e-12 && u[k].abs() > u[p].abs())
                    }
                };
                if better {
                    leave = Some(k);
                    best_ratio = ratio;
                }
            }
            let Some(p) = leave else {
                return Err(Error::LpUnbounded(self.vars[e].1));
            };

            let step = best_ratio.max(0.0);
            if step < 1e-13 {
                // Pivots that expel an artificial are always degenerate but
                // cannot cycle (artificials never return); only genuine
                // plateau steps arm the Bland fallback, and a real step
                // releases it again.
                if basis[p] < nv {
                    degenerate_streak += 1;
                    if degenerate_streak > 100 {
                        bland = true;
                    }
                }
            } else {
                degenerate_streak = 0;
                bland = false;
            }

            // Pivot: eta-update of B⁻¹ and the basic solution.
            let inv_pivot = 1.0 / u[p];
            for r in 0..m {
                binv[p * m + r] *= inv_pivot;
            }
            for k in 0..m {
                if k != p && u[k] != 0.0 {
                    let factor = u[k];
                    for r in 0..m {
                        binv[k * m + r] -= factor * binv[p * m + r];
                    }
                    x_b[k] -= factor * step;
                }
            }
            x_b[p] = step;
            in_basis[basis[p]] = false;
            in_basis[e] = true;
            basis[p] = e;
            iterations += 1;
        }

        self.package(&basis, &x_b, iterations)
    }

    /// Re-checks the reported basis against the constraints and packages it.
    fn package(&self, basis: &[usize], x_b: &[f64], iterations: usize) -> Result<LpSolution> {
        let nv = self.vars.len();
        let nt = self.types.len();
        if let Some(&worst) =
            x_b.iter().filter(|v| **v < -1e-9).min_by(|a, b| a.partial_cmp(b).unwrap())
        {
            return Err(Error::LpInfeasible(worst));
        }

        let mut value = 0.0;
        let mut row_mass = vec![0.0; nt];
        let mut mean_residual = vec![0.0; self.x_grid.len()];
        let mut entries = Vec::new();
        for (k, &b) in basis.iter().enumerate() {
            let mass = x_b[k].max(0.0);
            if b >= nv {
                // Artificials can only linger at zero.
                if mass > 1e-9 {
                    return Err(Error::LpStalled(format!(
                        "artificial variable carries mass {mass:.3e}"
                    )));
                }
                continue;
            }
            let (i, j) = self.vars[b];
            value += self.objective[b] * mass;
            row_mass[i] += mass;
            mean_residual[j] += (self.x_grid[j] - self.types[i]) * mass;
            if mass > 1e-12 {
                entries.push(SignalEntry {
                    row: i,
                    col: j,
                    theta: self.types[i],
                    x: self.x_grid[j],
                    mass,
                });
            }
        }
        let bp_residual = (0..nt)
            .map(|i| (row_mass[i] - self.masses[i]).abs())
            .fold(0.0f64, f64::max);
        let m_residual = mean_residual.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        if bp_residual > 1e-8 || m_residual > 1e-8 {
            return Err(Error::LpStalled(format!(
                "solution drifted off the constraints (row {bp_residual:.3e}, mean {m_residual:.3e})"
            )));
        }
        entries.sort_by_key(|e| (e.row, e.col));
        Ok(LpSolution { value, entries, iterations, bp_residual, m_residual })
    }

    /// The discrete full-revelation value on the same market and objective:
    /// every atom at its own mean, credited when it trades there.
    pub fn full_reveal_value(&self) -> f64 {
        let mut total = 0.0;
        for i in 0..self.types.len() {
            let d = self.diagonal[i];
            total += self.objective[d] * self.masses[i];
        }
        total
    }
}

fn identity(m: usize) -> Vec<f64> {
    let mut a = vec![0.0; m * m];
    for r in 0..m {
        a[r * m + r] = 1.0;
    }
    a
}

fn mat_vec(a: &[f64], v: &[f64], m: usize) -> Vec<f64> {
    (0..m).map(|r| (0..m).map(|c| a[r * m + c] * v[c]).sum()).collect()
}

/// Inverts the current basis from scratch (Gauss-Jordan, partial pivoting).
fn refactor(cols: &[Vec<(usize, f64)>], basis: &[usize], m: usize) -> Option<Vec<f64>> {
    let w = 2 * m;
    let mut aug = vec![0.0; m * w];
    for (k, &b) in basis.iter().enumerate() {
        for &(r, v) in &cols[b] {
            aug[r * w + k] = v;
        }
    }
    for r in 0..m {
        aug[r * w + m + r] = 1.0;
    }
    for col in 0..m {
        let mut piv = col;
        for r in col + 1..m {
            if aug[r * w + col].abs() > aug[piv * w + col].abs() {
                piv = r;
            }
        }
        if aug[piv * w + col].abs() < 1e-12 {
            return None;
        }
        if piv != col {
            for c in 0..w {
                aug.swap(piv * w + c, col * w + c);
            }
        }
        let inv = 1.0 / aug[col * w + col];
        for c in 0..w {
            aug[col * w + c] *= inv;
        }
        for r in 0..m {
            if r != col {
                let f = aug[r * w + col];
                if f != 0.0 {
                    for c in 0..w {
                        aug[r * w + c] -= f * aug[col * w + c];
                    }
                }
            }
        }
    }
    let mut binv = vec![0.0; m * m];
    for r in 0..m {
        binv[r * m..(r + 1) * m].copy_from_slice(&aug[r * w + m..r * w + w]);
    }
    Some(binv)
}

/// A positively-assorted quartet in a transport plan that a matching swap
/// improves, and by how much per unit of reassigned mass.
#[derive(Clone, Debug)]
pub struct SwapFinding {
    pub low_row: usize,
    pub high_row: usize,
    pub low_mean_col: usize,
    pub high_mean_col: usize,
    pub gain_rate: f64,
}

/// Searches a transport plan for two non-trading-alone (inefficient) types
/// assigned in the same order as their means — the lower type at the lower
/// mean — and prices the exact rebalancing that swaps them: move low-type
/// mass up, displace high-type mass from the upper column, and top the
/// lower column back up with high-type mass drawn partly from its own
/// diagonal (the mean ratios `(x - θ₁)/(x - θ₂)` differ across the two
/// columns, so the high row needs a diagonal reservoir for the circulation
/// to balance). Row masses and column means stay balanced throughout; if
/// the move raises the objective by more than 1e-7 per unit, the quartet is
/// returned. An optimal plan admits no such swap: matching must run
/// *against* the means.
pub fn nam_swap_check(
    dm: &DiscreteMarket,
    entries: &[SignalEntry],
    objective: &Objective,
) -> Option<SwapFinding> {
    const EPS: f64 = 1e-9;
    let coeff = |i: usize, x: f64| objective_coefficient(objective, dm.types[i], dm.costs[i], x);
    let inefficient = |i: usize| dm.costs[i] > dm.types[i];

    let mut diag_mass = vec![0.0; dm.types.len()];
    for e in entries {
        if (e.x - dm.types[e.row]).abs() <= MEAN_DEDUP {
            diag_mass[e.row] += e.mass;
        }
    }

    let mut carried: Vec<&SignalEntry> = entries
        .iter()
        .filter(|e| e.mass > EPS && inefficient(e.row) && e.x > dm.types[e.row] + MEAN_DEDUP)
        .collect();
    carried.sort_by_key(|e| (e.row, e.col));

    for lo in &carried {
        for hi in &carried {
            let (t1, t2) = (dm.types[lo.row], dm.types[hi.row]);
            let (xa, xb) = (lo.x, hi.x);
            // Positively assorted: strictly lower type at a strictly lower
            // mean, the higher type placeable at the lower mean, and a
            // diagonal reservoir to absorb the ratio mismatch.
            if !(t1 < t2 && xa < xb && t2 < xa - MEAN_DEDUP && diag_mass[hi.row] > EPS) {
                continue;
            }
            let r_a = (xa - t1) / (xa - t2);
            let r_b = (xb - t1) / (xb - t2);
            let gain = coeff(lo.row, xb) - coeff(lo.row, xa) + r_a * coeff(hi.row, xa)
                - r_b * coeff(hi.row, xb)
                + (r_b - r_a) * coeff(hi.row, t2);
            if gain > 1e-7 {
                return Some(SwapFinding {
                    low_row: lo.row,
                    high_row: hi.row,
                    low_mean_col: lo.col,
                    high_mean_col: hi.col,
                    gain_rate: gain,
                });
            }
        }
    }
    None
}

/// Plan-versus-oracle agreement across a refinement ladder.
#[derive(Clone, Debug)]
pub struct OracleComparison {
    /// `(n, oracle value, plan value - oracle value)` per grid size.
    pub rows: Vec<(usize, f64, f64)>,
    /// Largest amount by which the oracle beat the plan beyond its `5/n`
    /// discretization allowance (nonpositive when the plan holds up).
    pub worst_excess: f64,
    pub agrees: bool,
}

/// Compares a plan value against oracle optima at several grid sizes. The
/// oracle may exceed the plan by its discretization allowance `5/n`, never
/// more; a larger excess flags the plan (or the oracle) as wrong.
pub fn compare(plan_value: f64, oracle_values: &[(usize, f64)]) -> OracleComparison {
    compare_with_allowance(plan_value, oracle_values, 5.0)
}

/// `compare` with a custom allowance numerator: plans with only heuristic
/// optimality claims (the greedy multi-crossing route) get a wider `8/n`.
pub fn compare_with_allowance(
    plan_value: f64,
    oracle_values: &[(usize, f64)],
    numerator: f64,
) -> OracleComparison {
    let mut worst = f64::NEG_INFINITY;
    let mut rows = Vec::with_capacity(oracle_values.len());
    for &(n, lp) in oracle_values {
        rows.push((n, lp, plan_value - lp));
        worst = worst.max(lp - plan_value - numerator / n as f64);
    }
    OracleComparison { rows, worst_excess: worst, agrees: worst <= 0.0 }
}
