//! Dense univariate polynomials in the monomial basis.
//!
//! These are the raw pieces of [`crate::scalar::ScalarFn`]. Coefficients are
//! stored lowest-degree first in the *global* coordinate (not shifted per
//! piece), which keeps piece arithmetic trivial; on the unit interval with
//! degrees this small, conditioning is not a concern.

/// Evaluate by Horner's rule. An empty slice is the zero polynomial.
pub fn eval(coefs: &[f64], t: f64) -> f64 {
    coefs.iter().rev().fold(0.0, |acc, &c| acc * t + c)
}

/// Coefficients of the derivative.
pub fn deriv(coefs: &[f64]) -> Vec<f64> {
    if coefs.len() <= 1 {
        return vec![];
    }
    coefs[1..]
        .iter()
        .enumerate()
        .map(|(i, &c)| (i + 1) as f64 * c)
        .collect()
}

/// Coefficients of the antiderivative with zero constant term.
pub fn antideriv(coefs: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(coefs.len() + 1);
    out.push(0.0);
    out.extend(coefs.iter().enumerate().map(|(i, &c)| c / (i + 1) as f64));
    out
}

/// Exact definite integral over `[lo, hi]`.
pub fn integral(coefs: &[f64], lo: f64, hi: f64) -> f64 {
    let a = antideriv(coefs);
    eval(&a, hi) - eval(&a, lo)
}

/// Product of two polynomials.
pub fn mul(a: &[f64], b: &[f64]) -> Vec<f64> {
    if a.is_empty() || b.is_empty() {
        return vec![];
    }
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, &x) in a.iter().enumerate() {
        for (j, &y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

/// `a + s*b`.
pub fn axpy(a: &[f64], s: f64, b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len().max(b.len())];
    for (i, &x) in a.iter().enumerate() {
        out[i] += x;
    }
    for (i, &y) in b.iter().enumerate() {
        out[i] += s * y;
    }
    out
}

/// All real roots inside `[lo, hi]`, ascending, refined to ~1e-13. The
/// interval is split at stationary points so every subinterval is monotone;
/// bisection then isolates at most one root per subinterval. A stationary
/// point whose value is within `touch_tol` of zero is reported as a root even
/// without a sign change (even-order contact).
pub fn roots_in(coefs: &[f64], lo: f64, hi: f64, touch_tol: f64) -> Vec<f64> {
    let mut p = coefs.to_vec();
    while p.last().is_some_and(|c| *c == 0.0) {
        p.pop();
    }
    if p.len() <= 1 || !(lo < hi) {
        return vec![]; // constant: no isolated roots
    }

    let mut cuts = vec![lo, hi];
    if p.len() > 2 {
        cuts.extend(roots_in(&deriv(&p), lo, hi, 0.0));
        cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());
        cuts.dedup_by(|a, b| (*a - *b).abs() < 1e-13);
    }

    let vals: Vec<f64> = cuts.iter().map(|&t| eval(&p, t)).collect();
    let mut roots = Vec::new();

    // Strict sign changes: each subinterval is monotone, so bisection
    // isolates exactly one root.
    for i in 0..cuts.len() - 1 {
        let (fa, fb) = (vals[i], vals[i + 1]);
        if fa == 0.0 || fb == 0.0 || fa * fb > 0.0 {
            continue;
        }
        let (mut a, mut b) = (cuts[i], cuts[i + 1]);
        for _ in 0..200 {
            let mid = 0.5 * (a + b);
            if mid <= a || mid >= b {
                break;
            }
            let fm = eval(&p, mid);
            if fm == 0.0 {
                a = mid;
                b = mid;
                break;
            }
            if fa.signum() == fm.signum() {
                a = mid;
            } else {
                b = mid;
            }
        }
        roots.push(0.5 * (a + b));
    }

    // Cut points that are themselves (near-)zeros. Boundary zeros always
    // count. An interior stationary zero counts when the sign flips across
    // it (odd contact); an even-order touch, exact or within `touch_tol`,
    // only when tangencies are requested.
    for i in 0..cuts.len() {
        let exact = vals[i] == 0.0;
        let near = touch_tol > 0.0 && vals[i].abs() <= touch_tol;
        if !exact && !near {
            continue;
        }
        if i == 0 || i + 1 == cuts.len() {
            if exact {
                roots.push(cuts[i]);
            }
            continue;
        }
        let left = (0..i).rev().map(|j| vals[j]).find(|v| *v != 0.0);
        let right = (i + 1..cuts.len()).map(|j| vals[j]).find(|v| *v != 0.0);
        let flips = matches!((left, right), (Some(l), Some(r)) if l * r < 0.0);
        if (exact && flips) || touch_tol > 0.0 {
            roots.push(cuts[i]);
        }
    }

    roots.sort_by(|a, b| a.partial_cmp(b).unwrap());
    roots.dedup_by(|a, b| (*a - *b).abs() < 1e-11);
    roots
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn horner_and_calculus() {
        let p = [1.0, -2.0, 3.0]; // 1 - 2t + 3t^2
        assert_eq!(eval(&p, 2.0), 9.0);
        assert_eq!(deriv(&p), vec![-2.0, 6.0]);
        assert!((integral(&p, 0.0, 1.0) - (1.0 - 1.0 + 1.0)).abs() < 1e-15);
        let q = mul(&[1.0, 1.0], &[1.0, -1.0]); // (1+t)(1-t) = 1 - t^2
        assert_eq!(q, vec![1.0, 0.0, -1.0]);
    }

    #[test]
    fn cubic_roots_recovered() {
        // (t-0.2)(t-0.5)(t-0.8) expanded
        let p = [-0.08, 0.66, -1.5, 1.0];
        let r = roots_in(&p, 0.0, 1.0, 0.0);
        assert_eq!(r.len(), 3);
        for (got, want) in r.iter().zip([0.2, 0.5, 0.8]) {
            assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        }
    }

    #[test]
    fn boundary_and_tangent_roots() {
        // t(t - 1): roots at both endpoints of [0, 1]
        let r = roots_in(&[0.0, -1.0, 1.0], 0.0, 1.0, 0.0);
        assert_eq!(r.len(), 2);
        assert!(r[0].abs() < 1e-12 && (r[1] - 1.0).abs() < 1e-12);
        // (t - 0.5)^2 touches zero: only found when touch_tol allows
        let p = [0.25, -1.0, 1.0];
        assert!(roots_in(&p, 0.0, 1.0, 0.0).is_empty());
        let r = roots_in(&p, 0.0, 1.0, 1e-9);
        assert_eq!(r.len(), 1);
        assert!((r[0] - 0.5).abs() < 1e-9);
    }
}
