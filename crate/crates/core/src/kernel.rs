//! The finite-`N` increment kernel `ψ^N` of the window proportion and exact
//! checks of its moment identities.
//!
//! For `N <= EXACT_MAX_N` every probability is computed in rational
//! arithmetic (the float inputs are converted exactly), so identities that
//! hold exactly come out exactly. Larger `N` use log-space floats.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::error::KernelError;
use crate::measure::{Divergence, LambdaMeasure};
use crate::special::{ln_binomial, ln_q};

/// Largest `N` handled in exact rational arithmetic.
pub const EXACT_MAX_N: u64 = 16;

/// Scalar arithmetic used by the kernel sums.
trait Scalar: Clone + PartialOrd {
    fn zero() -> Self;
    fn one() -> Self;
    fn from_f64(x: f64) -> Self;
    fn from_u64(x: u64) -> Self;
    fn add(&self, o: &Self) -> Self;
    fn sub(&self, o: &Self) -> Self;
    fn mul(&self, o: &Self) -> Self;
    fn div(&self, o: &Self) -> Self;
    fn value(&self) -> f64;
    /// `P(Binomial(n, p) = k)`.
    fn binomial_pmf(n: u64, k: u64, p: &Self) -> Self;
    /// `P(X = k)` for `X` hypergeometric: `draws` from `pop` items of which
    /// `succ` are successes.
    fn hyper_pmf(pop: u64, draws: u64, succ: u64, k: u64) -> Self;
}

impl Scalar for f64 {
    fn zero() -> Self {
        0.0
    }
    fn one() -> Self {
        1.0
    }
    fn from_f64(x: f64) -> Self {
        x
    }
    fn from_u64(x: u64) -> Self {
        x as f64
    }
    fn add(&self, o: &Self) -> Self {
        self + o
    }
    fn sub(&self, o: &Self) -> Self {
        self - o
    }
    fn mul(&self, o: &Self) -> Self {
        self * o
    }
    fn div(&self, o: &Self) -> Self {
        self / o
    }
    fn value(&self) -> f64 {
        *self
    }
    fn binomial_pmf(n: u64, k: u64, p: &Self) -> Self {
        let p = *p;
        if p <= 0.0 {
            return if k == 0 { 1.0 } else { 0.0 };
        }
        if p >= 1.0 {
            return if k == n { 1.0 } else { 0.0 };
        }
        let q = 1.0 - p;
        (ln_binomial(n, k) + k as f64 * p.ln() + (n - k) as f64 * ln_q(p, q)).exp()
    }
    fn hyper_pmf(pop: u64, draws: u64, succ: u64, k: u64) -> Self {
        if k > succ || k > draws || draws - k > pop - succ {
            return 0.0;
        }
        (ln_binomial(succ, k) + ln_binomial(pop - succ, draws - k) - ln_binomial(pop, draws)).exp()
    }
}

fn big_binomial(n: u64, k: u64) -> BigInt {
    if k > n {
        return BigInt::zero();
    }
    let k = k.min(n - k);
    let mut acc = BigInt::one();
    for i in 0..k {
        acc = acc * BigInt::from(n - i) / BigInt::from(i + 1);
    }
    acc
}

impl Scalar for BigRational {
    fn zero() -> Self {
        Zero::zero()
    }
    fn one() -> Self {
        One::one()
    }
    fn from_f64(x: f64) -> Self {
        BigRational::from_float(x).expect("finite input")
    }
    fn from_u64(x: u64) -> Self {
        BigRational::from_integer(BigInt::from(x))
    }
    fn add(&self, o: &Self) -> Self {
        self + o
    }
    fn sub(&self, o: &Self) -> Self {
        self - o
    }
    fn mul(&self, o: &Self) -> Self {
        self * o
    }
    fn div(&self, o: &Self) -> Self {
        self / o
    }
    fn value(&self) -> f64 {
        ToPrimitive::to_f64(self).unwrap_or(f64::NAN)
    }
    fn binomial_pmf(n: u64, k: u64, p: &Self) -> Self {
        let q = <Self as Scalar>::one() - p;
        let c = BigRational::from_integer(big_binomial(n, k));
        let mut acc = c;
        for _ in 0..k {
            acc *= p;
        }
        for _ in 0..n - k {
            acc *= &q;
        }
        acc
    }
    fn hyper_pmf(pop: u64, draws: u64, succ: u64, k: u64) -> Self {
        if k > succ || k > draws || draws - k > pop - succ {
            return <Self as Scalar>::zero();
        }
        let num = big_binomial(succ, k) * big_binomial(pop - succ, draws - k);
        BigRational::new(num, big_binomial(pop, draws))
    }
}

/// Validated kernel parameters: `N`, and `r = Nr / N` with `Nr` integer.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Params {
    n: u64,
    nr: u64,
}

fn params(n: u64, r: f64) -> Result<Params, KernelError> {
    if n < 1 {
        return Err(KernelError::ParameterDomain("N must be at least 1".into()));
    }
    if !(0.0..=1.0).contains(&r) {
        return Err(KernelError::ParameterDomain(format!("r must lie in [0, 1], got {r}")));
    }
    let nr = n as f64 * r;
    let rounded = nr.round();
    if (nr - rounded).abs() > 1e-9 {
        return Err(KernelError::ParameterDomain(format!("N r must be an integer, got N={n}, r={r}")));
    }
    Ok(Params { n, nr: rounded as u64 })
}

fn check_unit(name: &str, x: f64) -> Result<(), KernelError> {
    if (0.0..=1.0).contains(&x) {
        Ok(())
    } else {
        Err(KernelError::ParameterDomain(format!("{name} must lie in [0, 1], got {x}")))
    }
}

/// Left-continuous inverse of a distribution given by its pmf on `0..=max`.
fn inverse_cdf<S: Scalar>(v: &S, max: u64, pmf: impl Fn(u64) -> S) -> u64 {
    let mut cdf = S::zero();
    for s in 0..=max {
        cdf = cdf.add(&pmf(s));
        if cdf >= *v {
            return s;
        }
    }
    max
}

/// `F^N_p(v)`, the binomial(N, p) quantile function.
pub fn binomial_inverse(v: f64, n: u64, p: f64) -> Result<u64, KernelError> {
    check_unit("v", v)?;
    check_unit("p", p)?;
    Ok(if n <= EXACT_MAX_N {
        binomial_inverse_in::<BigRational>(v, n, p)
    } else {
        binomial_inverse_in::<f64>(v, n, p)
    })
}

fn binomial_inverse_in<S: Scalar>(v: f64, n: u64, p: f64) -> u64 {
    let p = S::from_f64(p);
    inverse_cdf(&S::from_f64(v), n, |s| S::binomial_pmf(n, s, &p))
}

/// `G_{N,n,r}(w)`: hypergeometric quantile, `n - 1` draws from `N - 1` items
/// with `Nr - 1` successes.
fn g_inverse<S: Scalar>(w: &S, p: Params, draws_plus_one: u64) -> u64 {
    let succ = p.nr - 1;
    inverse_cdf(w, draws_plus_one - 1, |s| S::hyper_pmf(p.n - 1, draws_plus_one - 1, succ, s))
}

/// `Ḡ_{N,n,r}(w)`: as [`g_inverse`] with `Nr` successes.
fn g_bar_inverse<S: Scalar>(w: &S, p: Params, draws_plus_one: u64) -> u64 {
    inverse_cdf(w, draws_plus_one - 1, |s| S::hyper_pmf(p.n - 1, draws_plus_one - 1, p.nr, s))
}

/// `ψ^N(r, u, p, v, w)`.
pub fn psi(n: u64, r: f64, u: f64, p: f64, v: f64, w: f64) -> Result<f64, KernelError> {
    for (name, x) in [("r", r), ("u", u), ("p", p), ("v", v), ("w", w)] {
        check_unit(name, x)?;
    }
    let k = binomial_inverse(v, n, p)?;
    if k < 2 {
        return Ok(0.0);
    }
    let par = params(n, r)?;
    let value = if n <= EXACT_MAX_N {
        psi_branch::<BigRational>(par, k, u <= r && par.nr > 0, w)
    } else {
        psi_branch::<f64>(par, k, u <= r && par.nr > 0, w)
    };
    Ok(value)
}

fn psi_branch<S: Scalar>(par: Params, k: u64, copy_branch: bool, w: f64) -> f64 {
    let w = S::from_f64(w);
    let nf = par.n as f64;
    if copy_branch {
        // Only reached with Nr >= 1.
        let g = g_inverse(&w, par, k);
        (k - 1 - g) as f64 / nf
    } else if par.nr > par.n - 1 {
        // r = 1 leaves no room for u > r.
        0.0
    } else {
        -(g_bar_inverse(&w, par, k) as f64) / nf
    }
}

/// `E[h(G)]` for the hypergeometric law with `draws` from `pop`, `succ` successes.
fn hyper_expect<S: Scalar>(pop: u64, draws: u64, succ: u64, h: impl Fn(u64) -> S) -> S {
    let mut acc = S::zero();
    for s in 0..=draws {
        let w = S::hyper_pmf(pop, draws, succ, s);
        if w > S::zero() {
            acc = acc.add(&w.mul(&h(s)));
        }
    }
    acc
}

/// `∫∫ ψ^N du dw` at fixed `(N, r, p, v)`, which vanishes identically.
pub fn mean_zero_residual(n: u64, r: f64, p: f64, v: f64) -> Result<f64, KernelError> {
    let par = params(n, r)?;
    let k = binomial_inverse(v, n, p)?;
    if k < 2 {
        return Ok(0.0);
    }
    Ok(if n <= EXACT_MAX_N {
        mean_given_k::<BigRational>(par, k).value()
    } else {
        mean_given_k::<f64>(par, k)
    })
}

/// `∫∫ ψ^N du dw` given `F^N_p(v) = k >= 2`.
fn mean_given_k<S: Scalar>(par: Params, k: u64) -> S {
    let r = S::from_u64(par.nr).div(&S::from_u64(par.n));
    let n_s = S::from_u64(par.n);
    let mut total = S::zero();
    if par.nr >= 1 {
        let e = hyper_expect(par.n - 1, k - 1, par.nr - 1, |s| S::from_u64(k - 1 - s));
        total = total.add(&r.mul(&e));
    }
    if par.nr < par.n {
        let e = hyper_expect(par.n - 1, k - 1, par.nr, |s| S::from_u64(s));
        total = total.sub(&S::one().sub(&r).mul(&e));
    }
    total.div(&n_s)
}

/// `∫∫ ψ^N(r,u,p,v,w)² du dw` given `F^N_p(v) = k >= 2`.
fn square_given_k<S: Scalar>(par: Params, k: u64) -> S {
    let r = S::from_u64(par.nr).div(&S::from_u64(par.n));
    let n2 = S::from_u64(par.n * par.n);
    let mut total = S::zero();
    if par.nr >= 1 {
        let e = hyper_expect(par.n - 1, k - 1, par.nr - 1, |s| {
            let d = S::from_u64(k - 1 - s);
            d.mul(&d)
        });
        total = total.add(&r.mul(&e));
    }
    if par.nr < par.n {
        let e = hyper_expect(par.n - 1, k - 1, par.nr, |s| {
            let d = S::from_u64(s);
            d.mul(&d)
        });
        total = total.add(&S::one().sub(&r).mul(&e));
    }
    total.div(&n2)
}

/// `A^N(r, p) = ∫∫∫ ψ^N² du dv dw`, which equals `p² r (1 - r)`.
pub fn second_moment(n: u64, r: f64, p: f64) -> Result<f64, KernelError> {
    check_unit("p", p)?;
    let par = params(n, r)?;
    Ok(if n <= EXACT_MAX_N {
        second_moment_in::<BigRational>(par, p).value()
    } else {
        second_moment_in::<f64>(par, p)
    })
}

fn second_moment_in<S: Scalar>(par: Params, p: f64) -> S {
    let p = S::from_f64(p);
    let mut total = S::zero();
    for k in 2..=par.n {
        let w = S::binomial_pmf(par.n, k, &p);
        if w > S::zero() {
            total = total.add(&w.mul(&square_given_k::<S>(par, k)));
        }
    }
    total
}

/// `∫∫∫ (ψ^N - p Ψ(u, r))² du dv dw` at fixed `p`, with `Ψ(u, r) = 1{u<=r} - r`.
fn l2_gap_at(par: Params, p: f64) -> f64 {
    let r = par.nr as f64 / par.n as f64;
    let nf = par.n as f64;
    let up = p * (1.0 - r);
    let down = -p * r;
    let mut total = 0.0;
    // F^N_p(v) <= 1: ψ vanishes.
    let small = f64::binomial_pmf(par.n, 0, &p) + f64::binomial_pmf(par.n, 1, &p);
    total += small * (r * up * up + (1.0 - r) * down * down);
    for k in 2..=par.n {
        let w = f64::binomial_pmf(par.n, k, &p);
        if w == 0.0 {
            continue;
        }
        let mut inner = 0.0;
        if par.nr >= 1 {
            inner += r * hyper_expect(par.n - 1, k - 1, par.nr - 1, |s| {
                let d = (k - 1 - s) as f64 / nf - up;
                d * d
            });
        }
        if par.nr < par.n {
            inner += (1.0 - r) * hyper_expect(par.n - 1, k - 1, par.nr, |s| {
                let d = -(s as f64) / nf - down;
                d * d
            });
        }
        total += w * inner;
    }
    total
}

/// Both sides of the `L²` distance identity between `ψ^N` and `p Ψ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvCheck {
    /// `∫ (ψ^N - p Ψ)² du ν(dp) dv dw` from finite sums and quadrature.
    pub lhs: f64,
    /// `2 r (1-r) [N/(N-1) ∫∫ (1-up)^{N-1} du Λ(dp) - Λ([0,1])/(N-1)]`.
    pub rhs: f64,
    /// `|lhs - rhs| / max(|rhs|, tiny)`.
    pub residual: f64,
}

/// Evaluates both sides of the `L²` identity for `ψ^N - p Ψ`.
pub fn conv_identity_check(n: u64, r: f64, measure: &LambdaMeasure) -> Result<ConvCheck, KernelError> {
    if n < 2 {
        return Err(KernelError::ParameterDomain("N must be at least 2".into()));
    }
    if measure.atom0() > 0.0 {
        return Err(KernelError::ParameterDomain("the measure must not charge 0".into()));
    }
    let par = params(n, r)?;
    let nf = n as f64;
    let lhs = measure.lambda_integral(
        &|p: f64, _q: f64| l2_gap_at(par, p) / (p * p),
        0.0,
        1.0,
        Divergence::Forbid,
    )?;
    // ∫_0^1 (1 - u p)^{N-1} du = (1 - (1-p)^N) / (N p), integrated against Λ.
    let inner = measure.lambda_integral(
        &|p: f64, q: f64| -(nf * ln_q(p, q)).exp_m1() / (nf * p),
        0.0,
        1.0,
        Divergence::Forbid,
    )?;
    let rhs = 2.0 * r * (1.0 - r) * (nf / (nf - 1.0) * inner - measure.total_mass() / (nf - 1.0));
    let residual = (lhs - rhs).abs() / rhs.abs().max(1e-300);
    let residual = if lhs == rhs { 0.0 } else { residual };
    Ok(ConvCheck { lhs, rhs, residual })
}

/// Largest residuals over the identity grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelReport {
    pub max_mean_zero_residual: f64,
    pub max_second_moment_error: f64,
    pub cells: usize,
    pub pass: bool,
}

/// Tolerance for the exact identities.
pub const IDENTITY_TOL: f64 = 1e-12;

/// Runs the mean-zero and second-moment identities over
/// `N ∈ ns`, `Nr ∈ 1..N`, `p ∈ ps`, `v ∈ vs`.
pub fn kernel_identity_grid(ns: &[u64], ps: &[f64], vs: &[f64]) -> Result<KernelReport, KernelError> {
    let mut worst_mean: f64 = 0.0;
    let mut worst_var: f64 = 0.0;
    let mut cells = 0;
    for &n in ns {
        for nr in 1..n {
            let r = nr as f64 / n as f64;
            for &p in ps {
                for &v in vs {
                    worst_mean = worst_mean.max(mean_zero_residual(n, r, p, v)?.abs());
                }
                let a = second_moment(n, r, p)?;
                worst_var = worst_var.max((a - p * p * r * (1.0 - r)).abs());
                cells += 1;
            }
        }
    }
    Ok(KernelReport {
        max_mean_zero_residual: worst_mean,
        max_second_moment_error: worst_var,
        cells,
        pass: worst_mean <= IDENTITY_TOL && worst_var <= IDENTITY_TOL,
    })
}
