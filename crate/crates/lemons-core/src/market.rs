//! Market primitives: instances, crossing structure, posteriors, and the
//! competitive price induced by a posterior.
//!
//! An instance is a quality density `f` on `[0, 1]` together with a strictly
//! increasing seller cost `c`. Buyers compete, so a signal realization with
//! posterior mean `x` trades at price `x` against every seller whose cost is
//! at most `x`. Where `c` sits relative to the diagonal decides everything:
//! types with `c(t) < t` trade even under full information, types with
//! `c(t) > t` only trade if pooled upward.

use crate::error::{Error, Result};
use crate::scalar::{FnKind, ScalarFn};

/// Position of the cost curve relative to the diagonal.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Regime {
    /// One crossing, cost above the diagonal first: the classic setting
    /// where high types are efficient and low types need pooling.
    GainsAtTop,
    /// One crossing, cost below the diagonal first (requires `c(0) = 0`,
    /// which the caller must declare explicitly).
    GainsAtBottom,
    /// Two or more crossings.
    MultiCrossing,
}

impl std::fmt::Display for Regime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Regime::GainsAtTop => "gains-at-top",
            Regime::GainsAtBottom => "gains-at-bottom",
            Regime::MultiCrossing => "multi-crossing",
        };
        f.write_str(s)
    }
}

/// Maximal interval on which `c - id` keeps one sign.
#[derive(Clone, Copy, Debug)]
pub struct Block {
    pub lo: f64,
    pub hi: f64,
    /// True when `c(t) < t` on the interior.
    pub efficient: bool,
}

/// Interior crossings of the cost curve with the diagonal and the sign
/// blocks they separate.
#[derive(Clone, Debug)]
pub struct CrossingProfile {
    pub crossings: Vec<f64>,
    pub blocks: Vec<Block>,
    pub regime: Regime,
}

impl CrossingProfile {
    /// The lowest crossing; for a single-crossing market this is the
    /// threshold type usually written `t*`.
    pub fn first_crossing(&self) -> f64 {
        self.crossings[0]
    }
}

/// A quality density paired with a seller cost curve.
#[derive(Clone, Debug)]
pub struct MarketInstance {
    density: ScalarFn,
    cost: ScalarFn,
    declared_regime: Option<Regime>,
}

impl MarketInstance {
    pub fn new(density: ScalarFn, cost: ScalarFn) -> Result<Self> {
        Self::with_declared_regime(density, cost, None)
    }

    /// Build an instance, optionally declaring the expected regime.
    /// A cost with `c(0) = 0` is only accepted under a declared
    /// gains-at-bottom regime, since the origin then sits on the diagonal
    /// and the usual "worst type never trades" reasoning does not apply.
    pub fn with_declared_regime(
        density: ScalarFn,
        cost: ScalarFn,
        declared_regime: Option<Regime>,
    ) -> Result<Self> {
        if density.kind() != FnKind::Density {
            return Err(Error::InvalidInstance("density argument is not a density".into()));
        }
        if cost.kind() != FnKind::Cost {
            return Err(Error::InvalidInstance("cost argument is not a cost".into()));
        }
        if cost.eval(0.0) < 1e-12 && declared_regime != Some(Regime::GainsAtBottom) {
            return Err(Error::InvalidInstance(
                "cost vanishes at the bottom type; declare the gains-at-bottom regime to accept this".into(),
            ));
        }
        let inst = MarketInstance { density, cost, declared_regime };
        let profile = inst.crossing_profile()?;
        if let Some(declared) = inst.declared_regime {
            if declared != profile.regime {
                return Err(Error::InvalidInstance(format!(
                    "declared regime {declared} but the cost curve implies {}",
                    profile.regime
                )));
            }
        }
        Ok(inst)
    }

    pub fn density(&self) -> &ScalarFn {
        &self.density
    }

    pub fn cost(&self) -> &ScalarFn {
        &self.cost
    }

    pub fn declared_regime(&self) -> Option<Regime> {
        self.declared_regime
    }

    pub fn f(&self, t: f64) -> f64 {
        self.density.eval(t)
    }

    pub fn cdf(&self, t: f64) -> f64 {
        self.density.primitive(t)
    }

    /// Conditional mean of quality on `[lo, hi]`.
    pub fn mean(&self, lo: f64, hi: f64) -> f64 {
        self.density.mean(lo, hi)
    }

    pub fn c(&self, t: f64) -> f64 {
        self.cost.eval(t)
    }

    pub fn c_deriv(&self, t: f64) -> f64 {
        self.cost.deriv(t)
    }

    /// Reservation value of type `t`: selling at any price of at least
    /// `min(t, c(t))` is weakly profitable once quality itself caps the
    /// outside option.
    pub fn aux_cost(&self, t: f64) -> f64 {
        t.min(self.c(t))
    }

    /// Inverse cost, defined on `[c(0), c(1)]`.
    pub fn cost_inverse(&self, x: f64) -> Option<f64> {
        self.cost.invert(x)
    }

    /// Inverse cost with arguments clamped into the cost range; callers that
    /// probe slightly outside (seeded starts, quadrature endpoints) get the
    /// nearest boundary type.
    pub fn cost_inverse_clamped(&self, x: f64) -> f64 {
        let lo = self.c(0.0);
        let hi = self.c(1.0);
        self.cost.invert(x.clamp(lo, hi)).unwrap_or_else(|| if x <= lo { 0.0 } else { 1.0 })
    }

    /// Locate the interior crossings of `c` with the diagonal and classify
    /// the regime. Tangential touches (no sign change) are not crossings.
    pub fn crossing_profile(&self) -> Result<CrossingProfile> {
        let roots = self.cost.crossings_with_identity();
        let interior: Vec<f64> = roots.into_iter().filter(|r| *r > 1e-9 && *r < 1.0 - 1e-9).collect();
        let (crossings, blocks) = sign_blocks(|t| self.c(t) - t, &interior);
        if blocks.len() < 2 {
            return Err(Error::InvalidInstance(
                "cost curve does not cross the diagonal inside (0, 1)".into(),
            ));
        }
        let regime = match (blocks.len(), blocks[0].efficient) {
            (2, false) => Regime::GainsAtTop,
            (2, true) => Regime::GainsAtBottom,
            _ => Regime::MultiCrossing,
        };
        Ok(CrossingProfile { crossings, blocks, regime })
    }

    /// Sign blocks of the price-surplus margin `(1 - beta) c(t) - t`:
    /// positive where trading type `t` at its cost-covering price loses
    /// surplus weight, negative where it gains.
    fn surplus_margin_blocks(&self, beta: f64) -> (Vec<f64>, Vec<Block>) {
        let s = 1.0 - beta;
        let roots = self.cost.scaled_crossings_with_identity(s);
        let interior: Vec<f64> = roots.into_iter().filter(|r| *r > 1e-9 && *r < 1.0 - 1e-9).collect();
        sign_blocks(|t| s * self.c(t) - t, &interior)
    }
}

/// Split `[0, 1]` at the candidate roots and merge adjacent pieces where the
/// sign does not actually flip. Returns the separating roots and the blocks;
/// a positive sign means the probe function is positive (inefficient side
/// when probing `c - id`).
fn sign_blocks(probe: impl Fn(f64) -> f64, candidates: &[f64]) -> (Vec<f64>, Vec<Block>) {
    let mut cuts = vec![0.0];
    cuts.extend_from_slice(candidates);
    cuts.push(1.0);
    let mut crossings = Vec::new();
    let mut blocks: Vec<Block> = Vec::new();
    for w in cuts.windows(2) {
        let (lo, hi) = (w[0], w[1]);
        if hi - lo < 1e-12 {
            continue;
        }
        let efficient = probe(0.5 * (lo + hi)) < 0.0;
        match blocks.last_mut() {
            Some(last) if last.efficient == efficient => last.hi = hi,
            _ => {
                if let Some(last) = blocks.last() {
                    crossings.push(last.hi);
                }
                blocks.push(Block { lo, hi, efficient });
            }
        }
    }
    (crossings, blocks)
}

/// A finite-support belief over qualities.
#[derive(Clone, Debug)]
pub struct Posterior {
    support: Vec<(f64, f64)>,
}

impl Posterior {
    pub fn new(mut support: Vec<(f64, f64)>) -> Result<Self> {
        if support.is_empty() {
            return Err(Error::InvalidInstance("posterior has empty support".into()));
        }
        let mut total = 0.0;
        for &(t, w) in &support {
            if !(0.0..=1.0).contains(&t) || !t.is_finite() {
                return Err(Error::InvalidInstance(format!("posterior type {t} outside [0, 1]")));
            }
            if !(w > 0.0) || !w.is_finite() {
                return Err(Error::InvalidInstance(format!("posterior weight {w} is not positive")));
            }
            total += w;
        }
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidInstance(format!("posterior weights sum to {total}, not 1")));
        }
        support.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        Ok(Posterior { support })
    }

    pub fn support(&self) -> &[(f64, f64)] {
        &self.support
    }

    pub fn mean(&self) -> f64 {
        self.support.iter().map(|(t, w)| t * w).sum()
    }
}

/// Price formed by competitive buyers facing one posterior.
#[derive(Clone, Debug)]
pub struct PriceOutcome {
    pub price: f64,
    pub trade: bool,
    /// Every self-consistent price, ascending; the market selects the
    /// largest.
    pub fixed_points: Vec<f64>,
}

/// Solve `p = E[t | c(t) <= p]` under the posterior, selecting the largest
/// fixed point; an empty fixed-point set is market breakdown at price 0.
pub fn equilibrium_price(inst: &MarketInstance, post: &Posterior) -> PriceOutcome {
    let tol = 1e-10;
    let costs: Vec<f64> = post.support().iter().map(|&(t, _)| inst.c(t)).collect();
    let mut levels: Vec<f64> = costs.clone();
    levels.sort_by(|a, b| b.partial_cmp(a).unwrap());
    levels.dedup_by(|a, b| (*a - *b).abs() < tol);

    let mut fixed_points = Vec::new();
    for &level in &levels {
        let mut mass = 0.0;
        let mut moment = 0.0;
        let mut outside_min = f64::INFINITY;
        for (&(t, w), &c) in post.support().iter().zip(&costs) {
            if c <= level + tol {
                mass += w;
                moment += t * w;
            } else {
                outside_min = outside_min.min(c);
            }
        }
        let mean = moment / mass;
        // The pool is self-consistent when every member sells at its mean
        // and nobody outside would join.
        if level <= mean + tol && outside_min > mean + tol {
            fixed_points.push(mean);
        }
    }
    fixed_points.sort_by(|a, b| a.partial_cmp(b).unwrap());
    match fixed_points.last() {
        Some(&p) => PriceOutcome { price: p, trade: true, fixed_points },
        None => PriceOutcome { price: 0.0, trade: false, fixed_points },
    }
}

/// Which structural assumptions the instance satisfies.
#[derive(Clone, Debug)]
pub struct AssumptionReport {
    pub regime: Regime,
    /// Single crossing with the inefficient types at the bottom.
    pub gains_at_top: bool,
    /// Pooling everyone cannot be self-defeating: the full-market matching
    /// curve stops strictly above the bottom type. Only decidable once that
    /// curve has been solved, hence optional.
    pub no_full_trade: Option<bool>,
    /// The price-surplus margin switches sign at most once, for every
    /// weight beta on a coarse grid.
    pub surplus_single_switch: bool,
    pub notes: Vec<String>,
}

impl AssumptionReport {
    pub fn all_hold(&self) -> bool {
        self.gains_at_top && self.no_full_trade.unwrap_or(true) && self.surplus_single_switch
    }
}

/// Check the structural assumptions. `theta_lower`, when available, is the
/// bottom of the full-market matching band; pass `None` before the curve has
/// been solved.
pub fn check_assumptions(inst: &MarketInstance, theta_lower: Option<f64>) -> Result<AssumptionReport> {
    let profile = inst.crossing_profile()?;
    let mut notes = Vec::new();

    let gains_at_top = profile.regime == Regime::GainsAtTop;
    if !gains_at_top {
        notes.push(format!("regime is {}, not gains-at-top", profile.regime));
    }

    let no_full_trade = theta_lower.map(|t| t > 1e-9);
    if no_full_trade == Some(false) {
        notes.push("matching curve exhausts the whole market: full trade is attainable".into());
    }

    let mut surplus_single_switch = true;
    for beta in [0.0, 0.25, 0.5, 0.75, 1.0] {
        let (_, blocks) = inst.surplus_margin_blocks(beta);
        let ok = match blocks.len() {
            1 => blocks[0].efficient,
            2 => !blocks[0].efficient && blocks[1].efficient,
            _ => false,
        };
        if !ok {
            surplus_single_switch = false;
            notes.push(format!(
                "price-surplus margin switches sign {} times at beta = {beta}",
                blocks.len().saturating_sub(1)
            ));
        }
    }

    Ok(AssumptionReport {
        regime: profile.regime,
        gains_at_top,
        no_full_trade,
        surplus_single_switch,
        notes,
    })
}

#[cfg(test)]
pub(crate) fn canon_for_tests() -> MarketInstance {
    let f = ScalarFn::density(vec![0.0, 1.0], vec![vec![1.0]]).unwrap();
    let c = ScalarFn::cost(vec![0.0, 1.0], vec![vec![0.25, 0.5]]).unwrap();
    MarketInstance::new(f, c).unwrap()
}

#[cfg(test)]
pub(crate) fn three_crossing_for_tests() -> MarketInstance {
    // c(t) = t - (1/2)(t - 0.2)(t - 0.5)(t - 0.8): crossings exactly at
    // 0.2, 0.5, 0.8 and c' in [0.67, 1.045].
    let f = ScalarFn::density(vec![0.0, 1.0], vec![vec![1.0]]).unwrap();
    let c = ScalarFn::cost(vec![0.0, 1.0], vec![vec![0.04, 0.67, 0.75, -0.5]]).unwrap();
    MarketInstance::new(f, c).unwrap()
}

#[cfg(test)]
pub(crate) fn gains_at_bottom_for_tests() -> MarketInstance {
    // c(t) = t/2 + t^2: on the diagonal at the origin, efficient below 1/2.
    let f = ScalarFn::density(vec![0.0, 1.0], vec![vec![1.0]]).unwrap();
    let c = ScalarFn::cost_with_zero_origin(vec![0.0, 1.0], vec![vec![0.0, 0.5, 1.0]]).unwrap();
    MarketInstance::with_declared_regime(f, c, Some(Regime::GainsAtBottom)).unwrap()
}
