//! Double-exponential (tanh-sinh) quadrature on subintervals of `[0, 1]`.
//!
//! The integrand receives both `p` and its complement `q = 1 - p`, each
//! computed from the distance to the nearest endpoint, so integrands that are
//! singular at `p = 1` (factors like `(1 - p)^{-1}`) keep full relative
//! precision as the nodes crowd the endpoint.

use std::cell::Cell;
use std::f64::consts::FRAC_PI_2;

/// Result of a quadrature call.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadResult {
    pub value: f64,
    pub error: f64,
    pub converged: bool,
}

const MAX_LEVEL: u32 = 8;
const MAX_DEPTH: u32 = 10;
const T_MAX: f64 = 6.5;

/// Integrates `f(p, 1 - p)` over `[a, b]` with `0 <= a < b <= 1`.
///
/// Subdivides adaptively when a single tanh-sinh sweep fails to meet
/// `rel_tol` (or `abs_tol`, whichever is looser).
pub fn integrate_unit<F>(f: &F, a: f64, b: f64, rel_tol: f64, abs_tol: f64) -> QuadResult
where
    F: Fn(f64, f64) -> f64 + ?Sized,
{
    debug_assert!((0.0..=1.0).contains(&a) && (0.0..=1.0).contains(&b));
    if b <= a {
        return QuadResult {
            value: 0.0,
            error: 0.0,
            converged: true,
        };
    }
    adaptive(f, a, b, rel_tol, abs_tol, 0)
}

fn adaptive<F>(f: &F, a: f64, b: f64, rel_tol: f64, abs_tol: f64, depth: u32) -> QuadResult
where
    F: Fn(f64, f64) -> f64 + ?Sized,
{
    let r = tanh_sinh(f, a, b, rel_tol, abs_tol);
    if r.converged || depth >= MAX_DEPTH {
        return r;
    }
    let mid = 0.5 * (a + b);
    let left = adaptive(f, a, mid, rel_tol, 0.5 * abs_tol, depth + 1);
    let right = adaptive(f, mid, b, rel_tol, 0.5 * abs_tol, depth + 1);
    QuadResult {
        value: left.value + right.value,
        error: left.error + right.error,
        converged: left.converged && right.converged,
    }
}

/// One tanh-sinh sweep with level halving.
fn tanh_sinh<F>(f: &F, a: f64, b: f64, rel_tol: f64, abs_tol: f64) -> QuadResult
where
    F: Fn(f64, f64) -> f64 + ?Sized,
{
    let half = 0.5 * (b - a);
    let width = b - a;
    let one_minus_b = 1.0 - b;

    let bad = Cell::new(false);
    // Weighted sample at abscissa offset t (both sides for t > 0).
    let node = |t: f64| -> f64 {
        let u = FRAC_PI_2 * t.sinh();
        let e = (-2.0 * u).exp();
        let inv_cosh2 = 4.0 * e / ((1.0 + e) * (1.0 + e));
        let w = half * FRAC_PI_2 * t.cosh() * inv_cosh2;
        if w == 0.0 {
            return 0.0;
        }
        // Distance from the nearer endpoint.
        let d = width * e / (1.0 + e);
        let mut acc = 0.0;
        let mut eval = |p: f64, q: f64| {
            let v = f(p, q);
            if v.is_finite() {
                acc += w * v;
            } else if w > 1e-100 && d > 1e-100 {
                bad.set(true);
            }
        };
        if t == 0.0 {
            let p = a + half;
            eval(p, one_minus_b + half);
        } else if d > 0.0 {
            eval(a + d, one_minus_b + (width - d));
            eval(b - d, one_minus_b + d);
        }
        acc
    };

    let mut h = 1.0;
    let mut sum = node(0.0);
    let mut k = 1;
    loop {
        let t = k as f64 * h;
        if t > T_MAX {
            break;
        }
        sum += node(t);
        k += 1;
    }
    let mut estimate = h * sum;
    let mut error = f64::INFINITY;

    for level in 1..=MAX_LEVEL {
        h *= 0.5;
        let mut k = 1;
        loop {
            let t = k as f64 * h;
            if t > T_MAX {
                break;
            }
            sum += node(t);
            k += 2;
        }
        let next = h * sum;
        error = (next - estimate).abs();
        estimate = next;
        if bad.get() || !estimate.is_finite() {
            return QuadResult {
                value: f64::NAN,
                error: f64::INFINITY,
                converged: false,
            };
        }
        if level >= 3 && error <= (rel_tol * estimate.abs()).max(abs_tol) {
            return QuadResult {
                value: estimate,
                error,
                converged: true,
            };
        }
    }
    QuadResult {
        value: estimate,
        error,
        converged: false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomial_is_exact() {
        let r = integrate_unit(&|p: f64, _q: f64| 3.0 * p * p, 0.0, 1.0, 1e-13, 0.0);
        assert!(r.converged);
        assert!((r.value - 1.0).abs() < 1e-13, "{r:?}");
    }

    #[test]
    fn endpoint_singularities() {
        // ∫ p^{-1/2} dp = 2
        let r = integrate_unit(&|p: f64, _q: f64| p.powf(-0.5), 0.0, 1.0, 1e-12, 0.0);
        assert!((r.value - 2.0).abs() < 1e-10, "{r:?}");
        // ∫ (1-p)^{-0.9} dp = 10, singular at the top end
        let r = integrate_unit(&|_p: f64, q: f64| q.powf(-0.9), 0.0, 1.0, 1e-12, 0.0);
        assert!((r.value - 10.0).abs() < 1e-8, "{r:?}");
    }

    #[test]
    fn log_integral_on_subinterval() {
        let r = integrate_unit(&|p: f64, _q: f64| 1.0 / p, 0.5, 1.0, 1e-13, 0.0);
        assert!((r.value - std::f64::consts::LN_2).abs() < 1e-13);
    }

    #[test]
    fn sharp_transition_is_resolved() {
        // ∫ n e^{-n p} dp over [0,1] = 1 - e^{-n}
        let n = 1.0e4;
        let r = integrate_unit(&|p: f64, _q: f64| n * (-n * p).exp(), 0.0, 1.0, 1e-12, 0.0);
        assert!((r.value - 1.0).abs() < 1e-10, "{r:?}");
    }
}
