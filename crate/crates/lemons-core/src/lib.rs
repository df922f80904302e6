//! Optimal disclosure in markets for lemons.
//!
//! Sellers know their quality `t` in `[0, 1]` and sell when the price covers
//! their cost `c(t)`; competitive buyers price every signal realization at
//! its posterior mean. A disclosure policy therefore amounts to a splitting
//! of the prior into posteriors whose means double as prices, and designing
//! the policy is a martingale transport problem: move mass between types and
//! means subject to Bayes consistency, the mean constraint, and the
//! participation constraint that nobody sells below their reservation value.
//!
//! The crate computes the designs that maximize weighted trade volume or a
//! price-plus-surplus mix, certifies them with dual witnesses, and
//! cross-checks everything against a discretized linear program:
//!
//! - [`market`]: instances, crossing structure, equilibrium prices.
//! - [`ode`]: the negative-assortative matching curve and its solver.
//! - [`signal`]: signal plans (reveal / pool / cost-match segments), the
//!   optimal constructions, and exact objective evaluation.
//! - [`discretize`]: finite signals induced by a plan, feasibility residuals.
//! - [`dual`]: dual certificates (pointwise inequality, support conditions,
//!   duality gap).
//! - [`lp`]: an independent discretized transport LP and a simplex solver.
//! - [`config`]: TOML instance descriptions.

pub mod config;
pub mod discretize;
pub mod dual;
pub mod error;
pub mod lp;
pub mod market;
pub mod ode;
mod poly;
mod quad;
pub mod scalar;
pub mod signal;

pub use config::{load_market, parse_alpha, parse_market, MarketConfig};
pub use discretize::{
    check_feasibility, discretize, evaluate_objective, DiscreteSignal, FeasibilityReport,
    ObjectiveEval, SignalEntry,
};
pub use dual::{
    build_dual, check_support_optimality, duality_gap, verify_zp, Certification, DualCertificate,
    ZpReport,
};
pub use error::{Error, Result};
pub use lp::{
    build_lp, compare, compare_with_allowance, evaluate_entries, nam_swap_check, solve_lp,
    DiscreteMarket, LpProblem, LpSolution, OracleComparison, SwapFinding,
};
pub use market::{
    check_assumptions, equilibrium_price, AssumptionReport, Block, CrossingProfile,
    MarketInstance, Posterior, PriceOutcome, Regime,
};
pub use ode::{solve_curve, CurveOptions, CurveSpec, CurveStart, MatchingCurve, SolvedCurve};
pub use scalar::{FnKind, ScalarFn};
pub use signal::{
    build_plan, classify_ratio, Objective, PlanFindings, RatioClass, Segment, SignalPlan,
};
