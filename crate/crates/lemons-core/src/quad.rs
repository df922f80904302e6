//! Quadrature helpers for integrands that are smooth except possibly at a
//! few known points: fixed Gauss-Legendre panels for the smooth pieces and
//! an adaptive Simpson rule that concentrates work near mild (integrable)
//! singularities.

/// 7-point Gauss-Legendre rule, exact through degree 13.
pub(crate) fn gauss<F: Fn(f64) -> f64>(f: &F, lo: f64, hi: f64) -> f64 {
    const X: [f64; 3] = [0.405845151377397167, 0.741531185599394440, 0.949107912342758525];
    const W: [f64; 3] = [0.381830050505118945, 0.279705391489276668, 0.129484966168869693];
    const W0: f64 = 0.417959183673469388;
    let mid = 0.5 * (lo + hi);
    let half = 0.5 * (hi - lo);
    let mut acc = W0 * f(mid);
    for i in 0..3 {
        acc += W[i] * (f(mid - half * X[i]) + f(mid + half * X[i]));
    }
    acc * half
}

fn simpson(fl: f64, fm: f64, fr: f64, h: f64) -> f64 {
    h / 6.0 * (fl + 4.0 * fm + fr)
}

#[allow(clippy::too_many_arguments)]
fn adapt<F: Fn(f64) -> f64>(
    f: &F,
    lo: f64,
    hi: f64,
    fl: f64,
    fm: f64,
    fr: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let mid = 0.5 * (lo + hi);
    let lm = 0.5 * (lo + mid);
    let rm = 0.5 * (mid + hi);
    let flm = f(lm);
    let frm = f(rm);
    let left = simpson(fl, flm, fm, mid - lo);
    let right = simpson(fm, frm, fr, hi - mid);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    adapt(f, lo, mid, fl, flm, fm, left, 0.5 * tol, depth - 1)
        + adapt(f, mid, hi, fm, frm, fr, right, 0.5 * tol, depth - 1)
}

/// Adaptive Simpson integration to absolute tolerance `tol`.
pub(crate) fn adaptive<F: Fn(f64) -> f64>(f: &F, lo: f64, hi: f64, tol: f64) -> f64 {
    if hi <= lo {
        return 0.0;
    }
    let fl = f(lo);
    let fm = f(0.5 * (lo + hi));
    let fr = f(hi);
    let whole = simpson(fl, fm, fr, hi - lo);
    adapt(f, lo, hi, fl, fm, fr, whole, tol, 48)
}
