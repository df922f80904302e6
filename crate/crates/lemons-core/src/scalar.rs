//! Piecewise-polynomial scalar functions on the unit type space.
//!
//! Market primitives (prior density `f`, cost `c`, weight `alpha`) are all
//! piecewise polynomials of low degree on a shared domain `[0, 1]`. Keeping
//! them in this closed class makes every downstream integral exact
//! (antiderivatives of polynomials) and every root isolable per piece, which
//! is what the verification layer's tight tolerances rely on.

use crate::error::{Error, Result};
use crate::poly;

/// Degree cap per piece: generous enough for the usual weight families
/// (powers of `1 - t` up to the sixth) while keeping root isolation cheap.
pub const MAX_DEGREE: usize = 6;

/// Spacing of the validation sample grid for sign conditions.
const SIGN_GRID: f64 = 1e-3;
/// Continuity tolerance for values and first derivatives at interior knots.
const KNOT_TOL: f64 = 1e-10;

/// What a [`ScalarFn`] represents; decides which validity conditions apply.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FnKind {
    /// Prior density: strictly positive, integrates to one.
    Density,
    /// Unit cost: strictly positive and strictly increasing. (A zero value at
    /// the origin is tolerated only when the instance explicitly declares the
    /// gains-at-bottom regime; see [`ScalarFn::cost_with_zero_origin`].)
    Cost,
    /// Objective weight: unconstrained sign.
    Weight,
}

impl FnKind {
    fn name(self) -> &'static str {
        match self {
            FnKind::Density => "density",
            FnKind::Cost => "cost",
            FnKind::Weight => "weight",
        }
    }
}

/// A piecewise polynomial on `[0, 1]`: `pieces[i]` holds monomial
/// coefficients (in the global coordinate) valid on
/// `[breakpoints[i], breakpoints[i+1]]`.
#[derive(Clone, Debug)]
pub struct ScalarFn {
    kind: FnKind,
    breakpoints: Vec<f64>,
    pieces: Vec<Vec<f64>>,
    /// Antiderivative value accumulated at each left knot, so the primitive
    /// is continuous across pieces and zero at the origin.
    accum: Vec<f64>,
}

impl ScalarFn {
    pub fn density(breakpoints: Vec<f64>, pieces: Vec<Vec<f64>>) -> Result<Self> {
        Self::build(FnKind::Density, breakpoints, pieces, false)
    }

    pub fn cost(breakpoints: Vec<f64>, pieces: Vec<Vec<f64>>) -> Result<Self> {
        Self::build(FnKind::Cost, breakpoints, pieces, false)
    }

    /// Cost constructor for instances that declare the gains-at-bottom
    /// regime, where `c(0) = 0` is admissible (positivity is still required
    /// on `(0, 1]`).
    pub fn cost_with_zero_origin(breakpoints: Vec<f64>, pieces: Vec<Vec<f64>>) -> Result<Self> {
        Self::build(FnKind::Cost, breakpoints, pieces, true)
    }

    pub fn weight(breakpoints: Vec<f64>, pieces: Vec<Vec<f64>>) -> Result<Self> {
        Self::build(FnKind::Weight, breakpoints, pieces, false)
    }

    /// Constant weight, e.g. `alpha = 1` for trade volume.
    pub fn constant(value: f64) -> Self {
        Self::raw(FnKind::Weight, vec![0.0, 1.0], vec![vec![value]])
    }

    /// Internal constructor for derived combinations that are already known
    /// to be structurally sound (shape checks only, no sign conditions).
    pub(crate) fn raw(kind: FnKind, breakpoints: Vec<f64>, pieces: Vec<Vec<f64>>) -> Self {
        let accum = accumulate(&breakpoints, &pieces);
        ScalarFn { kind, breakpoints, pieces, accum }
    }

    fn build(
        kind: FnKind,
        breakpoints: Vec<f64>,
        pieces: Vec<Vec<f64>>,
        zero_origin_ok: bool,
    ) -> Result<Self> {
        let fail = |reason: String| Error::InvalidFunction { kind: kind.name(), reason };

        if breakpoints.len() < 2 {
            return Err(fail("need at least two breakpoints".into()));
        }
        if pieces.len() + 1 != breakpoints.len() {
            return Err(fail(format!(
                "{} breakpoints require {} coefficient rows, got {}",
                breakpoints.len(),
                breakpoints.len() - 1,
                pieces.len()
            )));
        }
        if breakpoints[0].abs() > 1e-12 || (breakpoints[breakpoints.len() - 1] - 1.0).abs() > 1e-12
        {
            return Err(fail("breakpoints must start at 0 and end at 1".into()));
        }
        if breakpoints.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(fail("breakpoints must be strictly increasing".into()));
        }
        for (i, p) in pieces.iter().enumerate() {
            if p.is_empty() || p.len() > MAX_DEGREE + 1 {
                return Err(fail(format!(
                    "piece {i} must have 1..={} coefficients (degree <= {MAX_DEGREE})",
                    MAX_DEGREE + 1
                )));
            }
            if p.iter().any(|c| !c.is_finite()) {
                return Err(fail(format!("piece {i} has a non-finite coefficient")));
            }
        }

        // C^1 continuity at interior knots.
        for i in 1..pieces.len() {
            let t = breakpoints[i];
            let dv = (poly::eval(&pieces[i - 1], t) - poly::eval(&pieces[i], t)).abs();
            if dv > KNOT_TOL {
                return Err(fail(format!("value jump {dv:.3e} at knot {t}")));
            }
            let dd = (poly::eval(&poly::deriv(&pieces[i - 1]), t)
                - poly::eval(&poly::deriv(&pieces[i]), t))
            .abs();
            if dd > KNOT_TOL {
                return Err(fail(format!("derivative jump {dd:.3e} at knot {t}")));
            }
        }

        let f = Self::raw(kind, breakpoints, pieces);

        // Sign conditions on a fixed fine grid.
        let steps = (1.0 / SIGN_GRID) as usize;
        for k in 0..=steps {
            let t = k as f64 * SIGN_GRID;
            let v = f.eval(t);
            match kind {
                FnKind::Density => {
                    if !(v > 0.0) {
                        return Err(fail(format!("not strictly positive at {t} (f = {v:.3e})")));
                    }
                }
                FnKind::Cost => {
                    if !(v > 0.0) && !(t == 0.0 && zero_origin_ok && v.abs() <= 1e-12) {
                        return Err(fail(format!("not positive at {t} (c = {v:.3e})")));
                    }
                    if !(f.deriv(t) > 0.0) {
                        return Err(fail(format!(
                            "not strictly increasing at {t} (c' = {:.3e})",
                            f.deriv(t)
                        )));
                    }
                }
                FnKind::Weight => {}
            }
        }

        if kind == FnKind::Density {
            let total = f.primitive(1.0);
            if (total - 1.0).abs() > 1e-8 {
                return Err(fail(format!("total mass {total} differs from 1 beyond 1e-8")));
            }
        }

        Ok(f)
    }

    pub fn kind(&self) -> FnKind {
        self.kind
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn piece_coefs(&self, i: usize) -> &[f64] {
        &self.pieces[i]
    }

    pub fn num_pieces(&self) -> usize {
        self.pieces.len()
    }

    fn piece_index(&self, t: f64) -> usize {
        // Largest i with breakpoints[i] <= t, clamped to a valid piece.
        match self
            .breakpoints
            .binary_search_by(|b| b.partial_cmp(&t).unwrap())
        {
            Ok(i) => i.min(self.pieces.len() - 1),
            Err(0) => 0,
            Err(i) => (i - 1).min(self.pieces.len() - 1),
        }
    }

    pub fn eval(&self, t: f64) -> f64 {
        poly::eval(&self.pieces[self.piece_index(t)], t)
    }

    pub fn deriv(&self, t: f64) -> f64 {
        poly::eval(&poly::deriv(&self.pieces[self.piece_index(t)]), t)
    }

    /// Antiderivative with `primitive(0) = 0`; for a density this is the CDF.
    pub fn primitive(&self, t: f64) -> f64 {
        let i = self.piece_index(t);
        self.accum[i] + poly::integral(&self.pieces[i], self.breakpoints[i], t)
    }

    /// Exact integral of the function over `[lo, hi]`.
    pub fn integral(&self, lo: f64, hi: f64) -> f64 {
        self.primitive(hi) - self.primitive(lo)
    }

    /// Exact integral of `t * self(t)` over `[lo, hi]`.
    pub fn first_moment(&self, lo: f64, hi: f64) -> f64 {
        self.piecewise_integral(lo, hi, |p| poly::mul(p, &[0.0, 1.0]))
    }

    /// Mass-weighted mean of `t` over `[lo, hi]` (for a density piece).
    /// Returns the midpoint when the interval carries no mass.
    pub fn mean(&self, lo: f64, hi: f64) -> f64 {
        let m = self.integral(lo, hi);
        if m.abs() < 1e-300 {
            return 0.5 * (lo + hi);
        }
        self.first_moment(lo, hi) / m
    }

    /// Exact integral over `[lo, hi]` of `self * other`.
    pub fn product_integral(&self, other: &ScalarFn, lo: f64, hi: f64) -> f64 {
        let mut knots: Vec<f64> = self
            .breakpoints
            .iter()
            .chain(other.breakpoints.iter())
            .copied()
            .filter(|&t| t > lo && t < hi)
            .collect();
        knots.push(lo);
        knots.push(hi);
        knots.sort_by(|a, b| a.partial_cmp(b).unwrap());
        knots.dedup_by(|a, b| (*a - *b).abs() < 1e-15);
        let mut total = 0.0;
        for w in knots.windows(2) {
            let mid = 0.5 * (w[0] + w[1]);
            let p = poly::mul(
                &self.pieces[self.piece_index(mid)],
                &other.pieces[other.piece_index(mid)],
            );
            total += poly::integral(&p, w[0], w[1]);
        }
        total
    }

    /// Exact integral over `[lo, hi]` after mapping each piece through `map`.
    fn piecewise_integral(&self, lo: f64, hi: f64, map: impl Fn(&[f64]) -> Vec<f64>) -> f64 {
        if !(hi > lo) {
            return 0.0;
        }
        let mut total = 0.0;
        let mut a = lo;
        while a < hi {
            let i = self.piece_index(a + 1e-15 * (1.0 + a.abs()));
            let b = if i + 1 < self.breakpoints.len() {
                self.breakpoints[i + 1].min(hi)
            } else {
                hi
            };
            total += poly::integral(&map(&self.pieces[i]), a, b);
            if b <= a {
                break;
            }
            a = b;
        }
        total
    }

    /// Roots of `s * self(t) - t` on `[0, 1]`, ascending.
    pub fn scaled_crossings_with_identity(&self, s: f64) -> Vec<f64> {
        let mut out = Vec::new();
        for (i, p) in self.pieces.iter().enumerate() {
            let shifted = poly::axpy(&scale(p, s), -1.0, &[0.0, 1.0]);
            let (lo, hi) = (self.breakpoints[i], self.breakpoints[i + 1]);
            out.extend(poly::roots_in(&shifted, lo, hi, 1e-12));
        }
        out.sort_by(|a, b| a.partial_cmp(b).unwrap());
        out.dedup_by(|a, b| (*a - *b).abs() < 1e-9);
        out
    }

    /// Roots of `self(t) - t` on `[0, 1]`, ascending.
    pub fn crossings_with_identity(&self) -> Vec<f64> {
        self.scaled_crossings_with_identity(1.0)
    }

    /// Invert a strictly monotone function: the unique `t` with
    /// `self(t) = y`, or `None` when `y` lies outside the range (beyond a
    /// 1e-9 fringe, which clamps to the endpoint).
    pub fn invert(&self, y: f64) -> Option<f64> {
        let (v0, v1) = (self.eval(0.0), self.eval(1.0));
        let (lo_v, hi_v) = if v0 < v1 { (v0, v1) } else { (v1, v0) };
        if y < lo_v - 1e-9 || y > hi_v + 1e-9 {
            return None;
        }
        if y <= lo_v {
            return Some(if v0 < v1 { 0.0 } else { 1.0 });
        }
        if y >= hi_v {
            return Some(if v0 < v1 { 1.0 } else { 0.0 });
        }
        let increasing = v1 > v0;
        let (mut a, mut b) = (0.0f64, 1.0f64);
        for _ in 0..200 {
            let mid = 0.5 * (a + b);
            if mid <= a || mid >= b {
                break;
            }
            let below = if increasing { self.eval(mid) < y } else { self.eval(mid) > y };
            if below {
                a = mid;
            } else {
                b = mid;
            }
        }
        let mut t = 0.5 * (a + b);
        // Two Newton polish steps tighten the bisection result to ~1e-15.
        for _ in 0..2 {
            let d = self.deriv(t);
            if d.abs() > 1e-12 {
                t = (t - (self.eval(t) - y) / d).clamp(a - 1e-12, b + 1e-12);
            }
        }
        Some(t.clamp(0.0, 1.0))
    }
}

fn scale(p: &[f64], s: f64) -> Vec<f64> {
    p.iter().map(|c| c * s).collect()
}

fn accumulate(breakpoints: &[f64], pieces: &[Vec<f64>]) -> Vec<f64> {
    let mut accum = Vec::with_capacity(pieces.len());
    let mut total = 0.0;
    for (i, p) in pieces.iter().enumerate() {
        accum.push(total);
        total += poly::integral(p, breakpoints[i], breakpoints[i + 1]);
    }
    accum
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uniform_density() -> ScalarFn {
        ScalarFn::density(vec![0.0, 1.0], vec![vec![1.0]]).unwrap()
    }

    fn canon_cost() -> ScalarFn {
        ScalarFn::cost(vec![0.0, 1.0], vec![vec![0.25, 0.5]]).unwrap()
    }

    #[test]
    fn validation_rejects_bad_primitives() {
        // Not integrating to one.
        assert!(ScalarFn::density(vec![0.0, 1.0], vec![vec![2.0]]).is_err());
        // Negative on part of the domain.
        assert!(ScalarFn::density(vec![0.0, 1.0], vec![vec![-0.5, 3.0]]).is_err());
        // Decreasing cost.
        assert!(ScalarFn::cost(vec![0.0, 1.0], vec![vec![0.9, -0.5]]).is_err());
        // Value jump at the interior knot.
        assert!(ScalarFn::density(
            vec![0.0, 0.5, 1.0],
            vec![vec![1.0], vec![2.0]]
        )
        .is_err());
        // Derivative jump at the interior knot.
        assert!(ScalarFn::weight(
            vec![0.0, 0.5, 1.0],
            vec![vec![1.0], vec![0.5, 1.0]]
        )
        .is_err());
        // Degree too high.
        assert!(ScalarFn::weight(vec![0.0, 1.0], vec![vec![1.0; 8]]).is_err());
        // Zero cost at origin needs the explicit constructor.
        assert!(ScalarFn::cost(vec![0.0, 1.0], vec![vec![0.0, 0.5, 1.0]]).is_err());
        assert!(ScalarFn::cost_with_zero_origin(vec![0.0, 1.0], vec![vec![0.0, 0.5, 1.0]]).is_ok());
    }

    #[test]
    fn two_piece_smooth_function_accepted() {
        // Quadratic splice that is C^1 at 0.5: 1 + (t-0.5)^2 vs 1 on [0,0.5].
        // Left piece: constant 1 with zero slope; right: 1.25 - t + t^2.
        let f = ScalarFn::weight(vec![0.0, 0.5, 1.0], vec![vec![1.0], vec![1.25, -1.0, 1.0]]);
        assert!(f.is_ok());
    }

    #[test]
    fn calculus_is_exact() {
        let f = uniform_density();
        assert!((f.primitive(0.3) - 0.3).abs() < 1e-15);
        assert!((f.mean(0.2, 0.6) - 0.4).abs() < 1e-15);
        let c = canon_cost();
        assert!((c.integral(0.0, 1.0) - 0.5).abs() < 1e-15);
        // invert: c(t) = 0.5 at t = 0.5
        assert!((c.invert(0.5).unwrap() - 0.5).abs() < 1e-12);
        assert!(c.invert(0.1).is_none());
        // product: int_0^1 c(t) * 1 dt
        assert!((c.product_integral(&uniform_density(), 0.0, 1.0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn identity_crossings() {
        let c = canon_cost();
        let r = c.crossings_with_identity();
        assert_eq!(r.len(), 1);
        assert!((r[0] - 0.5).abs() < 1e-12);
        // theta_beta at beta = 0.5: 0.5*(0.25 + 0.5 t) = t  =>  t = 1/6
        let r = c.scaled_crossings_with_identity(0.5);
        assert_eq!(r.len(), 1);
        assert!((r[0] - 1.0 / 6.0).abs() < 1e-12);
        // beta = 1: root exactly at the origin
        let r = c.scaled_crossings_with_identity(0.0);
        assert_eq!(r.len(), 1);
        assert!(r[0].abs() < 1e-12);
    }
}
