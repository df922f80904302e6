//! The matching-curve ODE and its solver.
//!
//! A reveal-pool signal matches inefficient types (cost above quality) with
//! efficient types (cost below quality) so that each pooled signal's
//! posterior mean `x` equals the cost of its efficient member, making `x`
//! simultaneously the market price and an unbiased quality estimate. Writing
//! `b = c^{-1}` for the efficient member at mean `x` and `a(x)` for the
//! inefficient member, mass balance of the two flows forces
//!
//! ```text
//! a'(x) = G(x, a) = [b'(x) f(b(x)) / f(a)] * (b(x) - x) / (a - x),
//! ```
//!
//! a strictly decreasing curve: better inefficient types pool at lower
//! means (negative assortative matching). At a crossing `c(t) = t` the right
//! side is 0/0; the admissible branch leaves the crossing with slope
//! `L = 1 - b'(t)`, the decreasing root of `L^2 - L = b'(b' - 1)`.

use crate::error::{Error, Result};
use crate::market::MarketInstance;

/// Right-hand side `G(x, a)` of the matching ODE. Near the removable
/// singularity `a = x` (which the solver never evaluates: it seeds past the
/// crossing) the guarded value is 0.
pub fn ode_rhs(inst: &MarketInstance, x: f64, a: f64) -> f64 {
    if (a - x).abs() < 1e-14 {
        return 0.0;
    }
    let b = inst.cost_inverse_clamped(x);
    let bp = 1.0 / inst.c_deriv(b);
    bp * (inst.f(b) / inst.f(a)) * (b - x) / (a - x)
}

/// Slope of the admissible branch at a crossing of `c` with the diagonal:
/// the decreasing root `1 - b'(t*)` of `L^2 - L = b'(b'-1)`.
pub fn seed_slope(inst: &MarketInstance, crossing: f64) -> f64 {
    1.0 - 1.0 / inst.c_deriv(crossing)
}

/// How an integration starts.
#[derive(Clone, Copy, Debug)]
pub enum CurveStart {
    /// Start on the diagonal at a crossing; the solver steps off by
    /// `seed_eps` along the admissible branch.
    Singular { crossing: f64 },
    /// Regular initial condition `a(x) = theta`.
    At { x: f64, theta: f64 },
}

/// Full description of one curve-solving task.
#[derive(Clone, Copy, Debug)]
pub struct CurveSpec {
    pub start: CurveStart,
    /// Terminal mean; may be below the start (backward integration).
    pub x_end: f64,
    /// Stop normally when the curve reaches this type from above (used by
    /// the greedy pairing and the price-surplus truncation).
    pub stop_type: Option<f64>,
    /// Escape bound: reaching this type before `x_end` without a `stop_type`
    /// is an error (for the full-market curve it means no-trade cannot bind,
    /// i.e. the no-full-trade assumption fails).
    pub hard_floor: f64,
}

#[derive(Clone, Copy, Debug)]
pub struct CurveOptions {
    pub rel_tol: f64,
    pub abs_tol: f64,
    /// Offset used to step off a singular start.
    pub seed_eps: f64,
    /// Number of stored sample intervals.
    pub samples: usize,
}

impl Default for CurveOptions {
    fn default() -> Self {
        CurveOptions { rel_tol: 1e-10, abs_tol: 1e-12, seed_eps: 1e-6, samples: 2000 }
    }
}

/// A solved matching curve: strictly decreasing samples `a(x)` on an
/// ascending mean grid, interpolated by a cubic Hermite whose stored slopes
/// are the exact ODE right-hand side at the samples.
#[derive(Clone, Debug)]
pub struct MatchingCurve {
    xs: Vec<f64>,
    types: Vec<f64>,
    slopes: Vec<f64>,
    residual: f64,
}

/// Outcome of [`solve_curve`].
#[derive(Clone, Debug)]
pub struct SolvedCurve {
    pub curve: MatchingCurve,
    /// Set when integration ended by reaching `stop_type` before `x_end`.
    pub stopped_at_type: bool,
}

impl MatchingCurve {
    pub fn x_lo(&self) -> f64 {
        self.xs[0]
    }

    pub fn x_hi(&self) -> f64 {
        *self.xs.last().unwrap()
    }

    /// Type matched at the highest mean (the lower end of the type band).
    pub fn theta_lo(&self) -> f64 {
        *self.types.last().unwrap()
    }

    /// Type matched at the lowest mean.
    pub fn theta_hi(&self) -> f64 {
        self.types[0]
    }

    /// Maximum interpolation defect `|a' - G(x, a)|` over interval midpoints.
    pub fn residual(&self) -> f64 {
        self.residual
    }

    pub fn samples(&self) -> impl Iterator<Item = (f64, f64, f64)> + '_ {
        (0..self.xs.len()).map(move |i| (self.xs[i], self.types[i], self.slopes[i]))
    }

    fn seg_index(&self, x: f64) -> usize {
        match self.xs.binary_search_by(|v| v.partial_cmp(&x).unwrap()) {
            Ok(i) => i.min(self.xs.len() - 2),
            Err(0) => 0,
            Err(i) => (i - 1).min(self.xs.len() - 2),
        }
    }

    fn hermite(&self, i: usize, x: f64) -> (f64, f64) {
        let h = self.xs[i + 1] - self.xs[i];
        let t = (x - self.xs[i]) / h;
        let (y0, y1) = (self.types[i], self.types[i + 1]);
        let (m0, m1) = (self.slopes[i] * h, self.slopes[i + 1] * h);
        let t2 = t * t;
        let t3 = t2 * t;
        let v = (2.0 * t3 - 3.0 * t2 + 1.0) * y0
            + (t3 - 2.0 * t2 + t) * m0
            + (-2.0 * t3 + 3.0 * t2) * y1
            + (t3 - t2) * m1;
        let d = ((6.0 * t2 - 6.0 * t) * y0
            + (3.0 * t2 - 4.0 * t + 1.0) * m0
            + (-6.0 * t2 + 6.0 * t) * y1
            + (3.0 * t2 - 2.0 * t) * m1)
            / h;
        (v, d)
    }

    /// Matched type `a(x)`; `x` is clamped to the solved mean range.
    pub fn type_at(&self, x: f64) -> f64 {
        let x = x.clamp(self.x_lo(), self.x_hi());
        self.hermite(self.seg_index(x), x).0
    }

    /// Interpolated slope `a'(x)`.
    pub fn deriv_at(&self, x: f64) -> f64 {
        let x = x.clamp(self.x_lo(), self.x_hi());
        self.hermite(self.seg_index(x), x).1
    }

    /// Inverse map: the mean at which `theta` is matched. `theta` is clamped
    /// to the solved type band.
    pub fn mean_at(&self, theta: f64) -> f64 {
        let theta = theta.clamp(self.theta_lo(), self.theta_hi());
        // types[] is decreasing in x; find the bracketing segment.
        let (mut lo, mut hi) = (0usize, self.xs.len() - 1);
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if self.types[mid] >= theta {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let (mut a, mut b) = (self.xs[lo], self.xs[hi]);
        for _ in 0..80 {
            let mid = 0.5 * (a + b);
            if mid <= a || mid >= b {
                break;
            }
            if self.hermite(lo, mid).0 >= theta {
                a = mid;
            } else {
                b = mid;
            }
        }
        let mut x = 0.5 * (a + b);
        for _ in 0..2 {
            let (v, d) = self.hermite(lo, x);
            if d.abs() > 1e-14 {
                x = (x - (v - theta) / d).clamp(a, b);
            }
        }
        x
    }

}

/// Dormand-Prince 5(4) step: returns (5th-order value, error estimate,
/// first-same-as-last slope at the step end).
fn dopri_step(inst: &MarketInstance, x: f64, a: f64, h: f64, k1: f64) -> (f64, f64, f64) {
    const A21: f64 = 1.0 / 5.0;
    const A31: f64 = 3.0 / 40.0;
    const A32: f64 = 9.0 / 40.0;
    const A41: f64 = 44.0 / 45.0;
    const A42: f64 = -56.0 / 15.0;
    const A43: f64 = 32.0 / 9.0;
    const A51: f64 = 19372.0 / 6561.0;
    const A52: f64 = -25360.0 / 2187.0;
    const A53: f64 = 64448.0 / 6561.0;
    const A54: f64 = -212.0 / 729.0;
    const A61: f64 = 9017.0 / 3168.0;
    const A62: f64 = -355.0 / 33.0;
    const A63: f64 = 46732.0 / 5247.0;
    const A64: f64 = 49.0 / 176.0;
    const A65: f64 = -5103.0 / 18656.0;
    const B1: f64 = 35.0 / 384.0;
    const B3: f64 = 500.0 / 1113.0;
    const B4: f64 = 125.0 / 192.0;
    const B5: f64 = -2187.0 / 6784.0;
    const B6: f64 = 11.0 / 84.0;
    const E1: f64 = 71.0 / 57600.0;
    const E3: f64 = -71.0 / 16695.0;
    const E4: f64 = 71.0 / 1920.0;
    const E5: f64 = -17253.0 / 339200.0;
    const E6: f64 = 22.0 / 525.0;
    const E7: f64 = -1.0 / 40.0;

    let k2 = ode_rhs(inst, x + A21 * h, a + h * (A21 * k1));
    let k3 = ode_rhs(inst, x + 0.3 * h, a + h * (A31 * k1 + A32 * k2));
    let k4 = ode_rhs(inst, x + 0.8 * h, a + h * (A41 * k1 + A42 * k2 + A43 * k3));
    let k5 = ode_rhs(
        inst,
        x + 8.0 / 9.0 * h,
        a + h * (A51 * k1 + A52 * k2 + A53 * k3 + A54 * k4),
    );
    let k6 = ode_rhs(
        inst,
        x + h,
        a + h * (A61 * k1 + A62 * k2 + A63 * k3 + A64 * k4 + A65 * k5),
    );
    let a_new = a + h * (B1 * k1 + B3 * k3 + B4 * k4 + B5 * k5 + B6 * k6);
    let k7 = ode_rhs(inst, x + h, a_new);
    let err = h * (E1 * k1 + E3 * k3 + E4 * k4 + E5 * k5 + E6 * k6 + E7 * k7);
    (a_new, err, k7)
}

struct Stepper<'a> {
    inst: &'a MarketInstance,
    x: f64,
    a: f64,
    slope: f64,
    h: f64,
    rel_tol: f64,
    abs_tol: f64,
}

enum Advance {
    Reached,
    HitFloor { x: f64 },
}

impl<'a> Stepper<'a> {
    fn new(inst: &'a MarketInstance, x: f64, a: f64, opts: &CurveOptions, dir: f64) -> Self {
        Stepper {
            inst,
            x,
            a,
            slope: ode_rhs(inst, x, a),
            h: 1e-4 * dir,
            rel_tol: opts.rel_tol,
            abs_tol: opts.abs_tol,
        }
    }

    /// Integrate to `target` (in the direction of `h`), optionally watching
    /// for the solution value to fall below `floor`.
    fn advance(&mut self, target: f64, floor: Option<f64>) -> Result<Advance> {
        let dir = (target - self.x).signum();
        if dir == 0.0 {
            return Ok(Advance::Reached);
        }
        let mut steps = 0usize;
        while (target - self.x) * dir > 1e-15 {
            steps += 1;
            if steps > 2_000_000 {
                return Err(Error::CurveEscape(format!(
                    "step limit exceeded near x = {:.6}",
                    self.x
                )));
            }
            let mut h = self.h.abs().min((target - self.x).abs()) * dir;
            loop {
                let (a_new, err, k7) = dopri_step(self.inst, self.x, self.a, h, self.slope);
                let scale = self.abs_tol + self.rel_tol * self.a.abs().max(a_new.abs());
                let en = (err / scale).abs();
                if en <= 1.0 || h.abs() <= 1e-15 {
                    let factor = if en > 0.0 { (0.9 * en.powf(-0.2)).clamp(0.2, 5.0) } else { 5.0 };
                    self.h = h * factor;
                    if let Some(floor) = floor {
                        if a_new < floor {
                            let x_hit = self.locate_floor(h, floor);
                            self.a = floor;
                            self.x = x_hit;
                            self.slope = ode_rhs(self.inst, self.x, self.a);
                            return Ok(Advance::HitFloor { x: x_hit });
                        }
                    }
                    self.x += h;
                    self.a = a_new;
                    self.slope = k7;
                    // Backward curves must not run into the diagonal.
                    if h < 0.0 && self.a >= self.x - 1e-12 {
                        return Err(Error::CurveEscape(format!(
                            "curve met the diagonal at x = {:.6}",
                            self.x
                        )));
                    }
                    break;
                }
                h *= (0.9 * en.powf(-0.2)).clamp(0.2, 0.9);
            }
        }
        Ok(Advance::Reached)
    }

    /// Bisect inside an accepted step for the mean at which the solution
    /// crosses `floor`.
    fn locate_floor(&self, h: f64, floor: f64) -> f64 {
        let value_at = |frac: f64| {
            let (v, _, _) = dopri_step(self.inst, self.x, self.a, h * frac, self.slope);
            v
        };
        let (mut lo, mut hi) = (0.0f64, 1.0f64);
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if value_at(mid) < floor {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        self.x + h * 0.5 * (lo + hi)
    }
}

/// Solve one matching-curve task, storing `opts.samples` uniform intervals.
pub fn solve_curve(inst: &MarketInstance, spec: &CurveSpec, opts: &CurveOptions) -> Result<SolvedCurve> {
    let (x0, a0, anchor) = match spec.start {
        CurveStart::Singular { crossing } => {
            let dir = (spec.x_end - crossing).signum();
            let eps = opts.seed_eps * dir;
            let slope = seed_slope(inst, crossing);
            (crossing + eps, crossing + slope * eps, Some((crossing, crossing, slope)))
        }
        CurveStart::At { x, theta } => (x, theta, None),
    };

    // Pass 1: find where integration actually ends (x_end or the stop type).
    let mut end_x = spec.x_end;
    let mut stopped = false;
    {
        let mut s = Stepper::new(inst, x0, a0, opts, (spec.x_end - x0).signum());
        let floor = Some(spec.stop_type.unwrap_or(spec.hard_floor));
        match s.advance(spec.x_end, floor)? {
            Advance::Reached => {}
            Advance::HitFloor { x } => {
                if spec.stop_type.is_some() {
                    end_x = x;
                    stopped = true;
                } else {
                    return Err(Error::CurveEscape(format!(
                        "curve reached type {:.6} at mean {:.6} before the terminal mean {:.6}",
                        spec.hard_floor, x, spec.x_end
                    )));
                }
            }
        }
    }

    // Pass 2: re-integrate, landing exactly on each stored sample.
    let (grid_lo, grid_hi) = match anchor {
        Some((cx, _, _)) => (cx.min(end_x), cx.max(end_x)),
        None => (x0.min(end_x), x0.max(end_x)),
    };
    let n = opts.samples.max(16);
    let backward = end_x < x0;
    let mut xs = Vec::with_capacity(n + 1);
    let mut types = Vec::with_capacity(n + 1);
    let mut slopes = Vec::with_capacity(n + 1);

    let mut s = Stepper::new(inst, x0, a0, opts, if backward { -1.0 } else { 1.0 });
    // Targets in integration order.
    let targets: Vec<f64> = (0..=n)
        .map(|k| {
            let t = k as f64 / n as f64;
            if backward {
                grid_hi + (grid_lo - grid_hi) * t
            } else {
                grid_lo + (grid_hi - grid_lo) * t
            }
        })
        .collect();
    for (k, &tx) in targets.iter().enumerate() {
        if k == 0 {
            if let Some((cx, ca, cs)) = anchor {
                xs.push(cx);
                types.push(ca);
                slopes.push(cs);
                continue;
            }
            xs.push(x0);
            types.push(a0);
            slopes.push(ode_rhs(inst, x0, a0));
            continue;
        }
        // The first post-anchor target can sit inside the seed offset.
        if anchor.is_some() && (tx - x0) * if backward { -1.0 } else { 1.0 } <= 0.0 {
            let (cx, _, cs) = anchor.unwrap();
            xs.push(tx);
            types.push(types[0] + cs * (tx - cx));
            slopes.push(cs);
            continue;
        }
        s.advance(tx, None)?;
        xs.push(s.x);
        types.push(s.a);
        slopes.push(s.slope);
    }
    if backward {
        xs.reverse();
        types.reverse();
        slopes.reverse();
    }
    if stopped {
        // Pin the terminal sample to the stop type exactly.
        if backward {
            types[0] = spec.stop_type.unwrap();
        } else {
            *types.last_mut().unwrap() = spec.stop_type.unwrap();
        }
    }

    let mut curve = MatchingCurve { xs, types, slopes, residual: 0.0 };
    enforce_monotone(&mut curve)?;
    curve.residual = interpolation_residual(inst, &curve);
    Ok(SolvedCurve { curve, stopped_at_type: stopped })
}

/// Verify strict monotonicity and apply the Fritsch-Carlson bound (slopes at
/// most three times the adjacent secants) so the Hermite interpolant cannot
/// overshoot; accurate data never triggers the clamp.
fn enforce_monotone(curve: &mut MatchingCurve) -> Result<()> {
    let n = curve.xs.len();
    for i in 1..n {
        if curve.types[i] >= curve.types[i - 1] + 1e-12 {
            return Err(Error::CurveEscape(format!(
                "solved curve is not strictly decreasing near x = {:.6}",
                curve.xs[i]
            )));
        }
    }
    for i in 0..n {
        let mut bound = f64::NEG_INFINITY;
        if i > 0 {
            bound = bound.max(3.0 * (curve.types[i] - curve.types[i - 1]) / (curve.xs[i] - curve.xs[i - 1]));
        }
        if i + 1 < n {
            bound = bound.max(3.0 * (curve.types[i + 1] - curve.types[i]) / (curve.xs[i + 1] - curve.xs[i]));
        }
        if curve.slopes[i] > 0.0 {
            curve.slopes[i] = 0.0;
        }
        if curve.slopes[i] < bound {
            curve.slopes[i] = bound;
        }
    }
    Ok(())
}

fn interpolation_residual(inst: &MarketInstance, curve: &MatchingCurve) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..curve.xs.len() - 1 {
        let xm = 0.5 * (curve.xs[i] + curve.xs[i + 1]);
        let (v, d) = curve.hermite(i, xm);
        worst = worst.max((d - ode_rhs(inst, xm, v)).abs());
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::canon_for_tests;

    #[test]
    fn rhs_matches_closed_form_on_canon() {
        // c = 1/4 + t/2, f = 1: b(x) = 2x - 1/2, b' = 2, so
        // G(x, a) = 2 (2x - 1/2 - x)/(a - x) = 2 (x - 1/2)/(a - x).
        let inst = canon_for_tests();
        let g = ode_rhs(&inst, 0.6, 0.4);
        assert!((g - (-1.0)).abs() < 1e-12, "{g}");
        let g = ode_rhs(&inst, 0.75, 0.25);
        assert!((g - (-1.0)).abs() < 1e-12, "{g}");
        // Guarded singular point.
        assert_eq!(ode_rhs(&inst, 0.5, 0.5), 0.0);
        // Seed slope: decreasing root 1 - b' = -1.
        assert!((seed_slope(&inst, 0.5) + 1.0).abs() < 1e-12);
    }

    #[test]
    fn canon_curve_is_reflection() {
        // On the canonical instance the matching curve is a(x) = 1 - x.
        let inst = canon_for_tests();
        let spec = CurveSpec {
            start: CurveStart::Singular { crossing: 0.5 },
            x_end: 0.75,
            stop_type: None,
            hard_floor: 0.0,
        };
        let sol = solve_curve(&inst, &spec, &CurveOptions::default()).unwrap();
        assert!(!sol.stopped_at_type);
        let c = &sol.curve;
        let mut worst: f64 = 0.0;
        for (x, a, _) in c.samples() {
            worst = worst.max((a - (1.0 - x)).abs());
        }
        assert!(worst < 1e-7, "max deviation {worst}");
        assert!((c.theta_lo() - 0.25).abs() < 1e-6);
        assert!(c.residual() < 1e-7, "residual {}", c.residual());
        // Inverse lookups.
        assert!((c.mean_at(0.25) - 0.75).abs() < 1e-8);
        assert!((c.mean_at(0.4) - 0.6).abs() < 1e-8);
        assert!((c.type_at(0.6) - 0.4).abs() < 1e-8);
    }

    #[test]
    fn canon_backward_curve_hits_conserved_level() {
        // Backward from a(3/4) = 0 the first integral
        // (a - 1/2 - 2(x - 1/2)) (a - 1/2 + x - 1/2)^2 stays at -1/16,
        // giving a(1/2) = 1/2 - 2^(-4/3).
        let inst = canon_for_tests();
        let spec = CurveSpec {
            start: CurveStart::At { x: 0.75, theta: 0.0 },
            x_end: 0.5,
            stop_type: None,
            hard_floor: -1.0,
        };
        let sol = solve_curve(&inst, &spec, &CurveOptions::default()).unwrap();
        let c = &sol.curve;
        let want = 0.5 - 2f64.powf(-4.0 / 3.0);
        assert!((c.theta_hi() - want).abs() < 1e-6, "{} vs {want}", c.theta_hi());
        for (x, a, _) in c.samples() {
            let q = (a - 0.5 - 2.0 * (x - 0.5)) * (a - 0.5 + x - 0.5).powi(2);
            assert!((q + 1.0 / 16.0).abs() < 1e-7, "Q drifted to {q} at x = {x}");
        }
    }

    #[test]
    fn stop_type_truncates_exactly() {
        let inst = canon_for_tests();
        let spec = CurveSpec {
            start: CurveStart::Singular { crossing: 0.5 },
            x_end: 0.75,
            stop_type: Some(1.0 / 3.0),
            hard_floor: 0.0,
        };
        let sol = solve_curve(&inst, &spec, &CurveOptions::default()).unwrap();
        assert!(sol.stopped_at_type);
        let c = &sol.curve;
        // a(x) = 1 - x reaches 1/3 at x = 2/3.
        assert!((c.x_hi() - 2.0 / 3.0).abs() < 1e-8, "{}", c.x_hi());
        assert!((c.theta_lo() - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn hard_floor_escape_is_error() {
        // Truncating the band above the reachable range must error out.
        let inst = canon_for_tests();
        let spec = CurveSpec {
            start: CurveStart::Singular { crossing: 0.5 },
            x_end: 0.75,
            stop_type: None,
            hard_floor: 0.4,
        };
        match solve_curve(&inst, &spec, &CurveOptions::default()) {
            Err(Error::CurveEscape(_)) => {}
            other => panic!("expected escape, got {other:?}"),
        }
    }
}
