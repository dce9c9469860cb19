//! Combinatorics and cancellation-free evaluations of the reproduction kernels.
//!
//! Every `*_over_p2` function returns `g(p) / p²` for a kernel `g` that
//! vanishes like `p²` at the origin. They take the complement `q = 1 - p`
//! separately so callers near `p = 1` do not lose precision.

use statrs::function::gamma::ln_gamma;

/// Above this size binomial coefficients are formed in log space.
pub const LOG_SPACE_THRESHOLD: u64 = 60;

/// Below this value of `n p` the kernels are summed as power series.
const SERIES_CUTOFF: f64 = 0.1;

pub fn ln_factorial(n: u64) -> f64 {
    ln_gamma(n as f64 + 1.0)
}

pub fn ln_binomial(n: u64, k: u64) -> f64 {
    debug_assert!(k <= n);
    ln_factorial(n) - ln_factorial(k) - ln_factorial(n - k)
}

/// `C(n, k)` as a float.
pub fn binomial(n: u64, k: u64) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    if n > LOG_SPACE_THRESHOLD {
        return ln_binomial(n, k).exp();
    }
    let mut acc = 1.0_f64;
    for i in 0..k {
        acc = acc * (n - i) as f64 / (i + 1) as f64;
    }
    acc.round()
}

/// `ln(1 - p)` using whichever of `p` or `q` is accurate.
pub fn ln_q(p: f64, q: f64) -> f64 {
    if p < 0.5 {
        (-p).ln_1p()
    } else {
        q.ln()
    }
}

/// `[n p - 1 + (1 - p)^n] / p²`, the integrand of `φ(n)` against `Λ`.
pub fn phi_over_p2(n: u64, p: f64, q: f64) -> f64 {
    if n < 2 {
        return 0.0;
    }
    let nf = n as f64;
    if nf * p < SERIES_CUTOFF {
        // Σ_{k≥2} C(n,k) (-p)^{k-2}
        let mut term = nf * (nf - 1.0) / 2.0;
        let mut sum = term;
        let mut k = 2.0;
        while k < nf {
            term *= -p * (nf - k) / (k + 1.0);
            sum += term;
            if term.abs() <= 1e-17 * sum.abs() {
                break;
            }
            k += 1.0;
        }
        return sum;
    }
    let qn = (nf * ln_q(p, q)).exp();
    (nf * p - 1.0 + qn) / (p * p)
}

/// `[1 - (1-p)^n - n p (1-p)^{n-1}] / p²`, the integrand of `λ_n` against `Λ`.
pub fn total_over_p2(n: u64, p: f64, q: f64) -> f64 {
    if n < 2 {
        return 0.0;
    }
    let nf = n as f64;
    if nf * p < 0.5 {
        // Σ_{k≥2} C(n,k) p^{k-2} q^{n-k}, all terms positive.
        let lq = ln_q(p, q);
        let mut term = nf * (nf - 1.0) / 2.0 * ((nf - 2.0) * lq).exp();
        let mut sum = term;
        let ratio = p / q;
        let mut k = 2.0;
        while k < nf {
            term *= ratio * (nf - k) / (k + 1.0);
            sum += term;
            if term <= 1e-17 * sum {
                break;
            }
            k += 1.0;
        }
        return sum;
    }
    let lq = ln_q(p, q);
    let qn1 = ((nf - 1.0) * lq).exp();
    (1.0 - qn1 * (q + nf * p)) / (p * p)
}

/// `(1 - (1-p)^n) / p`, the increment `φ(n+1) - φ(n)` integrand against `Λ`.
pub fn increment_over_p2(n: u64, p: f64, q: f64) -> f64 {
    if p <= 0.0 {
        return n as f64;
    }
    -(n as f64 * ln_q(p, q)).exp_m1() / p
}

/// `(1 - p)^{-1} [n p - 1 + (1 - p)^n] / p²`, the integrand of `Φ(n)`.
pub fn capital_phi_over_p2(n: u64, p: f64, q: f64) -> f64 {
    phi_over_p2(n, p, q) / q
}

/// `Σ_{k≥2} C(n,k) a^{n-k} b^k = (a+b)^n - a^n - n a^{n-1} b` for `a, b ≥ 0`.
pub fn binomial_tail2(n: u64, a: f64, b: f64) -> f64 {
    let mut sum = 0.0;
    for k in 2..=n {
        sum += binomial(n, k) * a.powi((n - k) as i32) * b.powi(k as i32);
    }
    sum
}
