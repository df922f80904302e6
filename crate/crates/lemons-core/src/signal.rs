//! Signal plans: symbolic descriptions of disclosure policies and the
//! constructions that are optimal for each objective.
//!
//! A plan partitions the type space into segments. `Reveal` discloses the
//! type (price equals quality, trade only where cost is below quality).
//! `Pool` sends an inefficient band along a matching curve, each type `t`
//! to the mean `a^{-1}(t)`. `CostMatch` sends an efficient band to its own
//! cost, `t -> c(t)`; these are the signals whose prices exactly exhaust the
//! willingness of the matched inefficient partner, so each pool/cost-match
//! pair clears the mean constraint jointly.
//!
//! Which construction is optimal depends on the ratio
//! `t_x(theta) = w(theta) / (x - theta)`: the weight collected per unit of
//! "mean budget" spent lifting `theta` to price `x`. Ratios increasing in
//! `theta` favor matching the whole band below the crossing (negative
//! assortative matching down to a bottom type); convex ratios favor
//! splitting the budget between the band's two ends.

use crate::error::{Error, Result};
use crate::market::{MarketInstance, Regime};
use crate::ode::{solve_curve, CurveOptions, CurveSpec, CurveStart, MatchingCurve};
use crate::quad;
use crate::scalar::{FnKind, ScalarFn};
use crate::poly;

/// What the designer maximizes.
#[derive(Clone, Debug)]
pub enum Objective {
    /// Expected weighted trade volume `E[alpha(t) 1{trade}]`.
    Volume { alpha: ScalarFn },
    /// Expected price plus seller surplus,
    /// `E[(p - (1 - beta) c(t)) 1{trade}]`.
    PriceSurplus { beta: f64 },
}

impl Objective {
    /// Plain trade volume (`alpha = 1`).
    pub fn unit_volume() -> Objective {
        Objective::Volume { alpha: ScalarFn::constant(1.0) }
    }

    pub fn volume(alpha: ScalarFn) -> Result<Objective> {
        if alpha.kind() != FnKind::Weight {
            return Err(Error::InvalidInstance("volume weight must be a weight function".into()));
        }
        // The optimality theory needs a positive weight on trading types;
        // vanishing exactly at the top type is harmless (and the natural
        // convex-ratio weights such as `(1 - t)^4` do).
        for k in 0..=1000 {
            let t = k as f64 / 1000.0;
            let v = alpha.eval(t);
            let ok = if k == 1000 { v >= 0.0 } else { v > 0.0 };
            if !ok {
                return Err(Error::InvalidInstance(format!(
                    "volume weight must be strictly positive below the top type (alpha({t}) = {v:.3e})"
                )));
            }
        }
        Ok(Objective::Volume { alpha })
    }

    pub fn price_surplus(beta: f64) -> Result<Objective> {
        if !(0.0..=1.0).contains(&beta) {
            return Err(Error::InvalidInstance(format!("beta = {beta} outside [0, 1]")));
        }
        Ok(Objective::PriceSurplus { beta })
    }

    /// The weight whose integral over trading types equals the objective.
    /// For volume this is `alpha` itself. For price-plus-surplus, every
    /// trading type `t` contributes its price minus `(1 - beta) c(t)` and
    /// prices are means, so summing over a feasible signal collapses the
    /// price to the type itself: the effective weight is
    /// `t - (1 - beta) c(t)`.
    pub fn theta_weight(&self, inst: &MarketInstance) -> ScalarFn {
        match self {
            Objective::Volume { alpha } => alpha.clone(),
            Objective::PriceSurplus { beta } => {
                let cost = inst.cost();
                let pieces = (0..cost.num_pieces())
                    .map(|i| poly::axpy(&[0.0, 1.0], -(1.0 - beta), cost.piece_coefs(i)))
                    .collect();
                ScalarFn::raw(FnKind::Weight, cost.breakpoints().to_vec(), pieces)
            }
        }
    }

    /// Realized flow value of type `theta` trading at price `x`.
    pub fn trade_value(&self, inst: &MarketInstance, theta: f64, x: f64) -> f64 {
        match self {
            Objective::Volume { alpha } => alpha.eval(theta),
            Objective::PriceSurplus { beta } => x - (1.0 - beta) * inst.c(theta),
        }
    }
}

/// One segment of a plan, on a type interval `[lo, hi]`.
#[derive(Clone, Debug)]
pub enum Segment {
    Reveal { lo: f64, hi: f64 },
    Pool { lo: f64, hi: f64, curve: MatchingCurve },
    CostMatch { lo: f64, hi: f64 },
}

impl Segment {
    pub fn lo(&self) -> f64 {
        match self {
            Segment::Reveal { lo, .. } | Segment::Pool { lo, .. } | Segment::CostMatch { lo, .. } => *lo,
        }
    }

    pub fn hi(&self) -> f64 {
        match self {
            Segment::Reveal { hi, .. } | Segment::Pool { hi, .. } | Segment::CostMatch { hi, .. } => *hi,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            Segment::Reveal { .. } => "reveal",
            Segment::Pool { .. } => "pool",
            Segment::CostMatch { .. } => "cost-match",
        }
    }

    /// Signal realization (posterior mean) assigned to type `theta`.
    pub fn assignment(&self, inst: &MarketInstance, theta: f64) -> f64 {
        match self {
            Segment::Reveal { .. } => theta,
            Segment::Pool { curve, .. } => curve.mean_at(theta),
            Segment::CostMatch { .. } => inst.c(theta),
        }
    }
}

/// Named thresholds produced while building a plan, for reports.
#[derive(Clone, Debug, Default)]
pub struct PlanFindings {
    /// Crossing of the cost curve with the diagonal (single-crossing case).
    pub theta_star: Option<f64>,
    /// Bottom of the pooled band under full negative assortative matching.
    pub theta_lower: Option<f64>,
    /// Top type reached by the boundary curve through the whole cost range.
    pub theta_upper: Option<f64>,
    /// Mean at which the two pooled branches split (convex-ratio case).
    pub x_star: Option<f64>,
    /// Lower branch top type at the split.
    pub theta_one: Option<f64>,
    /// Upper branch bottom type at the split.
    pub theta_two: Option<f64>,
    /// Type at which the price-surplus margin switches sign.
    pub theta_beta: Option<f64>,
    /// Every root of the branch-indifference equation (the smallest is the
    /// split actually used).
    pub x_star_candidates: Vec<f64>,
}

/// A disclosure policy as an ordered partition of the type space.
#[derive(Clone, Debug)]
pub struct SignalPlan {
    pub segments: Vec<Segment>,
    pub label: String,
    pub findings: PlanFindings,
}

impl SignalPlan {
    fn new(mut segments: Vec<Segment>, label: &str, findings: PlanFindings) -> SignalPlan {
        segments.sort_by(|a, b| a.lo().partial_cmp(&b.lo()).unwrap());
        // Drop empty slivers and merge adjacent reveals.
        let mut merged: Vec<Segment> = Vec::new();
        for seg in segments {
            if seg.hi() - seg.lo() < 1e-9 {
                continue;
            }
            if let (Some(Segment::Reveal { hi, .. }), Segment::Reveal { lo: slo, hi: shi }) =
                (merged.last_mut(), &seg)
            {
                if (*slo - *hi).abs() < 1e-9 {
                    *hi = *shi;
                    continue;
                }
            }
            merged.push(seg);
        }
        SignalPlan { segments: merged, label: label.to_string(), findings }
    }

    /// Signal realization assigned to `theta`.
    pub fn assignment(&self, inst: &MarketInstance, theta: f64) -> f64 {
        for seg in &self.segments {
            if theta < seg.hi() - 1e-12 {
                return seg.assignment(inst, theta);
            }
        }
        match self.segments.last() {
            Some(seg) => seg.assignment(inst, theta),
            None => theta,
        }
    }

    /// Structural soundness: the segments partition `[0, 1]`, pooled bands
    /// stay inside their curve, pool images and cost-match images tile the
    /// same mean set (so the mean constraint can clear), and no type is
    /// asked to sell below its reservation value.
    pub fn validate(&self, inst: &MarketInstance) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidInstance(format!("invalid plan: {msg}")));
        if self.segments.is_empty() {
            return fail("no segments".into());
        }
        if self.segments[0].lo().abs() > 1e-9 {
            return fail(format!("first segment starts at {}", self.segments[0].lo()));
        }
        if (self.segments.last().unwrap().hi() - 1.0).abs() > 1e-9 {
            return fail(format!("last segment ends at {}", self.segments.last().unwrap().hi()));
        }
        for w in self.segments.windows(2) {
            if (w[0].hi() - w[1].lo()).abs() > 1e-9 {
                return fail(format!("gap between {} and {}", w[0].hi(), w[1].lo()));
            }
        }
        let mut pool_images = Vec::new();
        let mut cost_images = Vec::new();
        for seg in &self.segments {
            match seg {
                Segment::Pool { lo, hi, curve } => {
                    if curve.theta_lo() > lo + 1e-6 || curve.theta_hi() < hi - 1e-6 {
                        return fail(format!(
                            "pool [{lo:.6}, {hi:.6}] outside curve band [{:.6}, {:.6}]",
                            curve.theta_lo(),
                            curve.theta_hi()
                        ));
                    }
                    pool_images.push((curve.mean_at(*hi), curve.mean_at(*lo)));
                }
                Segment::CostMatch { lo, hi } => {
                    cost_images.push((inst.c(*lo), inst.c(*hi)));
                }
                Segment::Reveal { .. } => {}
            }
        }
        if !images_tile_equal(&mut pool_images, &mut cost_images) {
            return fail(format!(
                "pool images {pool_images:?} and cost-match images {cost_images:?} do not tile the same means"
            ));
        }
        // Participation: sample each segment.
        for seg in &self.segments {
            for k in 0..=50 {
                let t = seg.lo() + (seg.hi() - seg.lo()) * k as f64 / 50.0;
                let x = seg.assignment(inst, t);
                if x < inst.aux_cost(t) - 1e-7 {
                    return fail(format!(
                        "{} assigns type {t:.6} the mean {x:.6} below its reservation value {:.6}",
                        seg.kind_name(),
                        inst.aux_cost(t)
                    ));
                }
            }
        }
        Ok(())
    }

    /// Exact objective value, integrating the effective type weight over
    /// trading types: pooled and cost-matched types always trade, revealed
    /// types trade where cost is below quality.
    pub fn value(&self, inst: &MarketInstance, objective: &Objective) -> f64 {
        let w = objective.theta_weight(inst);
        let density = inst.density();
        let profile = inst.crossing_profile().expect("plan built from a valid instance");
        let mut total = 0.0;
        for seg in &self.segments {
            match seg {
                Segment::Reveal { lo, hi } => {
                    for b in profile.blocks.iter().filter(|b| b.efficient) {
                        let (a, z) = (lo.max(b.lo), hi.min(b.hi));
                        if z > a {
                            total += w.product_integral(density, a, z);
                        }
                    }
                }
                Segment::Pool { lo, hi, .. } | Segment::CostMatch { lo, hi } => {
                    total += w.product_integral(density, *lo, *hi);
                }
            }
        }
        total
    }

    /// Objective value computed the long way, through each type's actual
    /// assignment (prices for the surplus objective instead of the collapsed
    /// type weight). Agreement with [`SignalPlan::value`] is a consistency
    /// diagnostic for the mean constraint.
    pub fn value_x_form(&self, inst: &MarketInstance, objective: &Objective) -> f64 {
        let density = inst.density();
        let profile = inst.crossing_profile().expect("plan built from a valid instance");
        let mut total = 0.0;
        for seg in &self.segments {
            let integrand = |t: f64| objective.trade_value(inst, t, seg.assignment(inst, t)) * density.eval(t);
            match seg {
                Segment::Reveal { lo, hi } => {
                    for b in profile.blocks.iter().filter(|b| b.efficient) {
                        let (a, z) = (lo.max(b.lo), hi.min(b.hi));
                        if z > a {
                            total += quad::adaptive(&integrand, a, z, 1e-11);
                        }
                    }
                }
                Segment::Pool { lo, hi, .. } | Segment::CostMatch { lo, hi } => {
                    total += quad::adaptive(&integrand, *lo, *hi, 1e-11);
                }
            }
        }
        total
    }

    /// The pooled-band curves, ascending by band position: one curve for
    /// the single-branch construction, two for the split construction.
    pub fn pool_curves(&self) -> Vec<&MatchingCurve> {
        self.segments
            .iter()
            .filter_map(|s| match s {
                Segment::Pool { curve, .. } => Some(curve),
                _ => None,
            })
            .collect()
    }
}

/// Check that two interval families cover the same set, treating each side
/// as a union and comparing merged components within 1e-6.
fn images_tile_equal(a: &mut Vec<(f64, f64)>, b: &mut Vec<(f64, f64)>) -> bool {
    let merge = |list: &mut Vec<(f64, f64)>| -> Vec<(f64, f64)> {
        list.sort_by(|p, q| p.0.partial_cmp(&q.0).unwrap());
        let mut out: Vec<(f64, f64)> = Vec::new();
        for &(lo, hi) in list.iter() {
            if hi - lo < 1e-9 {
                continue;
            }
            match out.last_mut() {
                Some(last) if lo <= last.1 + 1e-6 => last.1 = last.1.max(hi),
                _ => out.push((lo, hi)),
            }
        }
        out
    };
    let ma = merge(a);
    let mb = merge(b);
    ma.len() == mb.len()
        && ma
            .iter()
            .zip(&mb)
            .all(|(p, q)| (p.0 - q.0).abs() < 1e-6 && (p.1 - q.1).abs() < 1e-6)
}

/// Disclose everything.
pub fn build_full_reveal() -> SignalPlan {
    SignalPlan::new(
        vec![Segment::Reveal { lo: 0.0, hi: 1.0 }],
        "full-reveal",
        PlanFindings::default(),
    )
}

/// Solve the full-market matching curve: seeded at the crossing, matched
/// through the entire efficient cost range. An escape through the bottom
/// type means pooling could carry the whole market, contradicting the
/// no-full-trade assumption.
pub fn solve_full_curve(inst: &MarketInstance, opts: &CurveOptions) -> Result<MatchingCurve> {
    let profile = inst.crossing_profile()?;
    if profile.regime != Regime::GainsAtTop {
        return Err(Error::AssumptionViolated(format!(
            "matching construction needs the gains-at-top regime, found {}",
            profile.regime
        )));
    }
    let t_star = profile.first_crossing();
    let spec = CurveSpec {
        start: CurveStart::Singular { crossing: t_star },
        x_end: inst.c(1.0),
        stop_type: None,
        hard_floor: 0.0,
    };
    match solve_curve(inst, &spec, opts) {
        Ok(sol) => Ok(sol.curve),
        Err(Error::CurveEscape(msg)) => Err(Error::AssumptionViolated(format!(
            "full trade is attainable; the matching curve exhausts the market ({msg})"
        ))),
        Err(e) => Err(e),
    }
}

/// Negative-assortative-matching plan: reveal below the matched band, pool
/// the band onto the efficient cost range, cost-match the efficient types.
pub fn build_nam(inst: &MarketInstance, opts: &CurveOptions) -> Result<SignalPlan> {
    let profile = inst.crossing_profile()?;
    let t_star = profile.first_crossing();
    let curve = solve_full_curve(inst, opts)?;
    let theta_lower = curve.theta_lo();
    let findings = PlanFindings {
        theta_star: Some(t_star),
        theta_lower: Some(theta_lower),
        ..Default::default()
    };
    Ok(SignalPlan::new(
        vec![
            Segment::Reveal { lo: 0.0, hi: theta_lower },
            Segment::Pool { lo: theta_lower, hi: t_star, curve },
            Segment::CostMatch { lo: t_star, hi: 1.0 },
        ],
        "single-branch-nam",
        findings,
    ))
}

/// The weight-per-mean-budget ratio `w(theta) / (x - theta)`.
pub fn ratio(w: &ScalarFn, x: f64, theta: f64) -> f64 {
    let gap = x - theta;
    if gap.abs() < 1e-12 {
        return f64::INFINITY * w.eval(theta).signum();
    }
    w.eval(theta) / gap
}

/// Shape class of the ratio family over the candidate pooled band.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RatioClass {
    /// `t_x` increasing in `theta` for every relevant `x`: matching the top
    /// of the band first is always best, giving the single-branch plan.
    Increasing,
    /// `t_x` convex in `theta` with the band bottom beating the interior
    /// benchmark at the highest mean: budget splits to the band's ends.
    ConvexWithEndpoint,
    /// Neither pattern; the construction theory is silent.
    Unclassified,
}

/// Classify the ratio family on a grid over
/// `[theta_lo, theta_hi] x [x_lo, x_hi]` (insets avoid the singular
/// diagonal corner). `theta_lower` is the bottom of the full matched band,
/// the benchmark in the endpoint comparison.
pub fn classify_ratio(
    w: &ScalarFn,
    theta_lo: f64,
    theta_hi: f64,
    x_lo: f64,
    x_hi: f64,
    theta_lower: f64,
) -> RatioClass {
    const K: usize = 200;
    let t_inset = 1e-4 * (theta_hi - theta_lo);
    let x_inset = 1e-4 * (x_hi - x_lo);
    let thetas: Vec<f64> = (0..K)
        .map(|i| theta_lo + t_inset + (theta_hi - theta_lo - 2.0 * t_inset) * i as f64 / (K - 1) as f64)
        .collect();
    let xs: Vec<f64> = (0..K)
        .map(|j| x_lo + x_inset + (x_hi - x_lo - 2.0 * x_inset) * j as f64 / (K - 1) as f64)
        .collect();

    let mut increasing = true;
    let mut convex = true;
    for &x in &xs {
        let col: Vec<f64> = thetas.iter().map(|&t| ratio(w, x, t)).collect();
        let scale = col.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        for i in 1..col.len() {
            if col[i] - col[i - 1] < -1e-12 * scale {
                increasing = false;
            }
        }
        for i in 1..col.len() - 1 {
            if col[i + 1] - 2.0 * col[i] + col[i - 1] < -1e-8 * scale {
                convex = false;
            }
        }
        if !increasing && !convex {
            return RatioClass::Unclassified;
        }
    }
    if increasing {
        return RatioClass::Increasing;
    }
    // Endpoint comparison at the top mean: pooling the band bottom must be
    // worth more per unit of budget than the matched-band benchmark.
    if convex && ratio(w, x_hi, theta_lo) > ratio(w, x_hi, theta_lower) {
        return RatioClass::ConvexWithEndpoint;
    }
    RatioClass::Unclassified
}

/// Split point of the two-branch construction.
#[derive(Clone, Debug)]
pub struct BranchSplit {
    pub x_star: f64,
    pub theta_one: f64,
    pub theta_two: f64,
    /// Every sign change of the branch-indifference function.
    pub candidates: Vec<f64>,
}

/// The mean at which the two pooled branches break even: the smallest root
/// of `t_x(lower branch type) = t_x(upper branch type)` over the efficient
/// cost range. `g1` is the boundary curve (band bottom at the top cost),
/// `g2` the full matched curve.
pub fn find_branch_split(
    inst: &MarketInstance,
    w: &ScalarFn,
    g1: &MatchingCurve,
    g2: &MatchingCurve,
) -> Result<BranchSplit> {
    let profile = inst.crossing_profile()?;
    let t_star = profile.first_crossing();
    let c1 = inst.c(1.0);
    let h = |x: f64| ratio(w, x, g1.type_at(x)) - ratio(w, x, g2.type_at(x));

    const K: usize = 800;
    let lo = t_star + 1e-6 * (c1 - t_star);
    let mut candidates = Vec::new();
    let mut prev_x = lo;
    let mut prev_h = h(lo);
    for k in 1..=K {
        let x = lo + (c1 - lo) * k as f64 / K as f64;
        let hx = h(x);
        if prev_h.is_finite() && hx.is_finite() && prev_h * hx < 0.0 {
            let (mut a, mut b) = (prev_x, x);
            let mut ha = prev_h;
            for _ in 0..80 {
                let m = 0.5 * (a + b);
                let hm = h(m);
                if ha * hm <= 0.0 {
                    b = m;
                } else {
                    a = m;
                    ha = hm;
                }
            }
            candidates.push(0.5 * (a + b));
        }
        prev_x = x;
        prev_h = hx;
    }
    candidates.dedup_by(|p, q| (*p - *q).abs() < 1e-9);
    let Some(&x_star) = candidates.first() else {
        return Err(Error::RootNotFound {
            what: "branch-indifference split".into(),
            lo: t_star,
            hi: c1,
        });
    };
    Ok(BranchSplit {
        x_star,
        theta_one: g1.type_at(x_star),
        theta_two: g2.type_at(x_star),
        candidates,
    })
}

/// Two-branch plan for convex ratios: pool the band bottom onto the high
/// cost range, reveal the middle, pool the band top onto the low cost
/// range, splitting the cost-matched types at the split mean's preimage.
fn build_two_branch(
    inst: &MarketInstance,
    w: &ScalarFn,
    band_bottom: f64,
    g2: MatchingCurve,
    opts: &CurveOptions,
    label: &str,
    mut findings: PlanFindings,
) -> Result<SignalPlan> {
    let profile = inst.crossing_profile()?;
    let t_star = profile.first_crossing();
    let c1 = inst.c(1.0);
    let g1 = solve_curve(
        inst,
        &CurveSpec {
            start: CurveStart::At { x: c1, theta: band_bottom },
            x_end: t_star,
            stop_type: None,
            hard_floor: -1.0,
        },
        opts,
    )?
    .curve;
    let split = find_branch_split(inst, w, &g1, &g2)?;
    let e_split = inst.cost_inverse_clamped(split.x_star);
    findings.theta_upper = Some(g1.theta_hi());
    findings.x_star = Some(split.x_star);
    findings.theta_one = Some(split.theta_one);
    findings.theta_two = Some(split.theta_two);
    findings.x_star_candidates = split.candidates.clone();
    let mut segments = vec![
        Segment::Pool { lo: band_bottom, hi: split.theta_one, curve: g1 },
        Segment::Reveal { lo: split.theta_one, hi: split.theta_two },
        Segment::Pool { lo: split.theta_two, hi: t_star, curve: g2 },
        Segment::CostMatch { lo: t_star, hi: e_split },
        Segment::CostMatch { lo: e_split, hi: 1.0 },
    ];
    if band_bottom > 1e-9 {
        segments.push(Segment::Reveal { lo: 0.0, hi: band_bottom });
    }
    Ok(SignalPlan::new(segments, label, findings))
}

/// Optimal plan for a weighted-volume objective.
pub fn build_volume_plan(
    inst: &MarketInstance,
    alpha: &ScalarFn,
    opts: &CurveOptions,
) -> Result<SignalPlan> {
    let profile = inst.crossing_profile()?;
    match profile.regime {
        Regime::GainsAtTop => {}
        Regime::GainsAtBottom | Regime::MultiCrossing => {
            return greedy_multicross(inst, alpha, opts);
        }
    }
    let t_star = profile.first_crossing();
    let c1 = inst.c(1.0);
    let g2 = solve_full_curve(inst, opts)?;
    let theta_lower = g2.theta_lo();
    match classify_ratio(alpha, 0.0, t_star, t_star, c1, theta_lower) {
        RatioClass::Increasing => build_nam(inst, opts),
        RatioClass::ConvexWithEndpoint => {
            let findings = PlanFindings {
                theta_star: Some(t_star),
                theta_lower: Some(theta_lower),
                ..Default::default()
            };
            build_two_branch(inst, alpha, 0.0, g2, opts, "two-branch-split", findings)
        }
        RatioClass::Unclassified => Err(Error::RatioUnclassified {
            context: "volume weight over the pooled band".into(),
        }),
    }
}

/// The type at which the price-surplus margin `(1 - beta) c(t) - t`
/// switches from positive to negative: below it, trading at a
/// cost-covering price destroys weighted surplus.
pub fn theta_beta(inst: &MarketInstance, beta: f64) -> Result<f64> {
    let s = 1.0 - beta;
    let roots: Vec<f64> = inst
        .cost()
        .scaled_crossings_with_identity(s)
        .into_iter()
        .filter(|r| *r > 1e-9 && *r < 1.0 - 1e-9)
        .collect();
    let sign_at = |t: f64| s * inst.c(t) - t;
    let mut switches = Vec::new();
    let mut cuts = vec![0.0];
    cuts.extend_from_slice(&roots);
    cuts.push(1.0);
    let mut prev_sign: Option<bool> = None;
    for w in cuts.windows(2) {
        if w[1] - w[0] < 1e-12 {
            continue;
        }
        let pos = sign_at(0.5 * (w[0] + w[1])) > 0.0;
        if let Some(p) = prev_sign {
            if p != pos {
                switches.push(w[0]);
            }
        }
        prev_sign = Some(pos);
    }
    match switches.len() {
        0 => {
            if prev_sign == Some(false) {
                Ok(0.0)
            } else {
                Err(Error::AssumptionViolated(
                    "price-surplus margin never turns negative".into(),
                ))
            }
        }
        1 => Ok(switches[0]),
        n => Err(Error::AssumptionViolated(format!(
            "price-surplus margin switches sign {n} times"
        ))),
    }
}

/// Optimal plan for the price-plus-surplus objective.
pub fn build_price_surplus_plan(
    inst: &MarketInstance,
    beta: f64,
    opts: &CurveOptions,
) -> Result<SignalPlan> {
    let profile = inst.crossing_profile()?;
    if profile.regime != Regime::GainsAtTop {
        return Err(Error::AssumptionViolated(format!(
            "price-surplus construction needs the gains-at-top regime, found {}",
            profile.regime
        )));
    }
    let t_star = profile.first_crossing();
    let tb = theta_beta(inst, beta)?;
    if tb >= t_star - 1e-9 {
        // The margin is negative only above the crossing: pooling any
        // inefficient type costs more surplus than it adds, so disclose.
        let mut findings = PlanFindings::default();
        findings.theta_star = Some(t_star);
        findings.theta_beta = Some(tb);
        return Ok(SignalPlan::new(
            vec![Segment::Reveal { lo: 0.0, hi: 1.0 }],
            "surplus-reveal-only",
            findings,
        ));
    }

    let g2 = solve_full_curve(inst, opts)?;
    let theta_lower = g2.theta_lo();
    let w_eff = Objective::PriceSurplus { beta }.theta_weight(inst);

    if tb > theta_lower + 1e-9 {
        // The matched band would dip into negative-margin types: truncate
        // the matching at the switch type and disclose both tails. The
        // efficient types whose costs exceed the truncated mean range stay
        // revealed; they trade on their own.
        let sol = solve_curve(
            inst,
            &CurveSpec {
                start: CurveStart::Singular { crossing: t_star },
                x_end: inst.c(1.0),
                stop_type: Some(tb),
                hard_floor: 0.0,
            },
            opts,
        )?;
        if !sol.stopped_at_type {
            return Err(Error::AssumptionViolated(
                "margin switch type not reached by the matching curve".into(),
            ));
        }
        let curve = sol.curve;
        let e_hi = inst.cost_inverse_clamped(curve.x_hi());
        let findings = PlanFindings {
            theta_star: Some(t_star),
            theta_lower: Some(theta_lower),
            theta_beta: Some(tb),
            ..Default::default()
        };
        return Ok(SignalPlan::new(
            vec![
                Segment::Reveal { lo: 0.0, hi: tb },
                Segment::Pool { lo: tb, hi: t_star, curve },
                Segment::CostMatch { lo: t_star, hi: e_hi },
                Segment::Reveal { lo: e_hi, hi: 1.0 },
            ],
            "surplus-truncated-nam",
            findings,
        ));
    }

    match classify_ratio(&w_eff, tb, t_star, t_star, inst.c(1.0), theta_lower) {
        RatioClass::Increasing => {
            let mut plan = build_nam(inst, opts)?;
            plan.label = "surplus-single-branch-nam".into();
            plan.findings.theta_beta = Some(tb);
            Ok(plan)
        }
        RatioClass::ConvexWithEndpoint => {
            let findings = PlanFindings {
                theta_star: Some(t_star),
                theta_lower: Some(theta_lower),
                theta_beta: Some(tb),
                ..Default::default()
            };
            build_two_branch(inst, &w_eff, tb, g2, opts, "surplus-two-branch-split", findings)
        }
        RatioClass::Unclassified => Err(Error::RatioUnclassified {
            context: "price-surplus margin over the pooled band".into(),
        }),
    }
}

/// Greedy block matching for markets whose cost curve crosses the diagonal
/// several times. Efficient blocks are processed top down; each pulls the
/// nearest inefficient block entirely below it through the matching curve
/// until its cost range is spent or the inefficient mass runs out, then
/// falls through to the next one. Inefficient mass that no efficient block
/// can reach (every remaining cost range sits below it) stays revealed.
pub fn greedy_multicross(
    inst: &MarketInstance,
    alpha: &ScalarFn,
    opts: &CurveOptions,
) -> Result<SignalPlan> {
    let profile = inst.crossing_profile()?;
    // (block position, lo, unconsumed top) per inefficient block.
    let mut remaining: Vec<(usize, f64, f64)> = profile
        .blocks
        .iter()
        .enumerate()
        .filter(|(_, b)| !b.efficient)
        .map(|(i, b)| (i, b.lo, b.hi))
        .collect();
    let mut segments: Vec<Segment> = Vec::new();

    let eff: Vec<(usize, f64, f64)> = profile
        .blocks
        .iter()
        .enumerate()
        .filter(|(_, b)| b.efficient)
        .map(|(i, b)| (i, b.lo, b.hi))
        .collect();

    for &(ei, e_lo, e_hi) in eff.iter().rev() {
        let x_end = inst.c(e_hi);
        let mut x_cur = inst.c(e_lo);
        let mut e_theta_cur = e_lo;
        while x_cur < x_end - 1e-12 {
            let Some(slot) = remaining
                .iter_mut()
                .rev()
                .find(|(bi, lo, hi)| *bi < ei && *hi > *lo + 1e-9)
            else {
                segments.push(Segment::Reveal { lo: e_theta_cur, hi: e_hi });
                break;
            };
            let (_, i_lo, i_hi) = (slot.0, slot.1, slot.2);
            if i_hi > x_cur + 1e-9 {
                return Err(Error::AssumptionViolated(format!(
                    "inefficient top {i_hi:.6} exceeds the available mean {x_cur:.6}; participation blocks the pairing"
                )));
            }
            if classify_ratio(alpha, i_lo, i_hi, x_cur.max(i_hi + 1e-9), x_end, i_lo)
                != RatioClass::Increasing
            {
                return Err(Error::RatioUnclassified {
                    context: format!(
                        "weight over block [{i_lo:.4}, {i_hi:.4}] against means [{x_cur:.4}, {x_end:.4}]"
                    ),
                });
            }
            let start = if (i_hi - x_cur).abs() < 1e-9 {
                CurveStart::Singular { crossing: i_hi }
            } else {
                CurveStart::At { x: x_cur, theta: i_hi }
            };
            let sol = solve_curve(
                inst,
                &CurveSpec { start, x_end, stop_type: Some(i_lo), hard_floor: i_lo },
                opts,
            )?;
            let curve = sol.curve;
            let a_stop = curve.theta_lo();
            let x_stop = curve.x_hi();
            let e_upper = if (x_stop - x_end).abs() < 1e-9 {
                e_hi
            } else {
                inst.cost_inverse_clamped(x_stop)
            };
            segments.push(Segment::Pool { lo: a_stop, hi: i_hi, curve });
            segments.push(Segment::CostMatch { lo: e_theta_cur, hi: e_upper });
            slot.2 = a_stop;
            e_theta_cur = e_upper;
            x_cur = x_stop;
            if !sol.stopped_at_type {
                break;
            }
        }
    }

    for (_, lo, hi) in remaining {
        if hi > lo + 1e-9 {
            segments.push(Segment::Reveal { lo, hi });
        }
    }

    let findings = PlanFindings {
        theta_star: profile.crossings.first().copied(),
        ..Default::default()
    };
    // Nothing poolable (gains at the bottom, or no efficient cost room):
    // the plan collapses to plain full revelation and is labeled as such.
    if segments.iter().all(|s| matches!(s, Segment::Reveal { .. })) {
        return Ok(SignalPlan::new(
            vec![Segment::Reveal { lo: 0.0, hi: 1.0 }],
            "full-reveal",
            findings,
        ));
    }
    Ok(SignalPlan::new(segments, "greedy-block-matching", findings))
}

/// Build the optimal plan for any objective.
pub fn build_plan(inst: &MarketInstance, objective: &Objective, opts: &CurveOptions) -> Result<SignalPlan> {
    match objective {
        Objective::Volume { alpha } => build_volume_plan(inst, alpha, opts),
        Objective::PriceSurplus { beta } => build_price_surplus_plan(inst, *beta, opts),
    }
}
