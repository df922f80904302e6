//! Crate-wide error type.

/// Everything that can go wrong while building instances, solving curves,
/// constructing plans, or running the discrete oracle.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A primitive (density / cost / weight) failed validation.
    #[error("invalid {kind} function: {reason}")]
    InvalidFunction { kind: &'static str, reason: String },

    /// A market instance is structurally unusable (regime mismatch, missing
    /// declaration, bad posterior weights, ...).
    #[error("invalid market instance: {0}")]
    InvalidInstance(String),

    /// An operation's precondition on market assumptions does not hold.
    #[error("assumption violated: {0}")]
    AssumptionViolated(String),

    /// The matching curve left its admissible band before reaching the
    /// terminal mean; for the full-market curve this means no-trade cannot
    /// bind and the market supports full trade.
    #[error("matching curve escaped its band: {0}")]
    CurveEscape(String),

    /// The ratio classifier could not place the weight in a case with a
    /// proven-optimal construction; callers should fall back to the oracle.
    #[error("ratio shape unclassified on {context}; optimality not claimed")]
    RatioUnclassified { context: String },

    /// A bracketed root expected by the theory was not found numerically.
    #[error("no root of {what} found in ({lo}, {hi})")]
    RootNotFound { what: &'static str, lo: f64, hi: f64 },

    /// The discrete LP has no feasible point (should not happen for grids
    /// containing the diagonal cells).
    #[error("discrete LP infeasible (phase-1 optimum {0:.3e} > 0)")]
    LpInfeasible(f64),

    /// The discrete LP is unbounded (should not happen: total mass is 1).
    #[error("discrete LP unbounded in column {0}")]
    LpUnbounded(usize),

    /// The simplex ran past its iteration budget or lost its basis to
    /// numerical drift; the reported solution would not be trustworthy.
    #[error("oracle simplex stalled: {0}")]
    LpStalled(String),

    /// A dual certificate failed verification.
    #[error("certificate check failed: {0}")]
    Certificate(String),

    /// Malformed instance file or run configuration.
    #[error("config error: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;
