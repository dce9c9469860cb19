//! Coalescence rates `λ_{k,ℓ}`, total rates `λ_n`, the functionals `φ` and
//! `Φ`, the selection threshold `μ`, and coming-down-from-infinity
//! classification.

use serde::{Deserialize, Serialize};
use statrs::function::beta::ln_beta;

use crate::error::RatesError;
use crate::measure::{Component, Divergence, LambdaMeasure};
use crate::special::{
    binomial, capital_phi_over_p2, increment_over_p2, ln_binomial, phi_over_p2, total_over_p2,
};

/// Default table size for [`RateTable`].
pub const DEFAULT_K_MAX: u64 = 256;

/// `λ_{k,ℓ} = ∫ p^{ℓ-2} (1-p)^{k-ℓ} Λ(dp)`, the rate at which a given set of
/// `ℓ` out of `k` blocks merges.
///
/// # Panics
/// If `ℓ < 2` or `ℓ > k`.
pub fn lambda_rate(measure: &LambdaMeasure, k: u64, l: u64) -> f64 {
    assert!(l >= 2 && l <= k, "lambda_rate needs 2 <= l <= k, got k={k}, l={l}");
    let mut total = if l == 2 { measure.atom0() } else { 0.0 };
    for c in measure.components() {
        total += match *c {
            Component::PointMass { location, mass } => {
                mass * location.powi((l - 2) as i32) * (1.0 - location).powi((k - l) as i32)
            }
            _ => {
                let (a, b, m) = c.density().expect("density component");
                m * (ln_beta(a + (l - 2) as f64, b + (k - l) as f64) - ln_beta(a, b)).exp()
            }
        };
    }
    total
}

/// `C(k, ℓ) λ_{k,ℓ}`, the rate of any `ℓ`-merger among `k` blocks.
pub fn merger_rate(measure: &LambdaMeasure, k: u64, l: u64) -> f64 {
    if k > crate::special::LOG_SPACE_THRESHOLD {
        let lr = lambda_rate(measure, k, l);
        if lr == 0.0 {
            return 0.0;
        }
        return (ln_binomial(k, l) + lr.ln()).exp();
    }
    binomial(k, l) * lambda_rate(measure, k, l)
}

fn breaks_for(n: u64) -> [f64; 2] {
    let x = 1.0 / n as f64;
    [0.1 * x, x]
}

/// Integral of a stable `g/p²` kernel against the continuous part of `Λ`.
fn kernel_integral<G>(measure: &LambdaMeasure, n: u64, g: &G) -> f64
where
    G: Fn(f64, f64) -> f64,
{
    measure
        .lambda_integral_with_breaks(g, 0.0, 1.0, &breaks_for(n), Divergence::Allow)
        .unwrap_or(f64::INFINITY)
}

/// Total merger rate among `n` blocks without the atom at zero:
/// `∫ [1 - (1-p)^n - n p (1-p)^{n-1}] ν(dp)`.
pub fn continuous_total_rate(measure: &LambdaMeasure, n: u64) -> f64 {
    if n < 2 {
        return 0.0;
    }
    kernel_integral(measure, n, &|p, q| total_over_p2(n, p, q))
}

/// `λ_n`, the total rate of mergers among `n` blocks.
pub fn total_rate(measure: &LambdaMeasure, n: u64) -> f64 {
    if n < 2 {
        return 0.0;
    }
    measure.atom0() * binomial(n, 2) + continuous_total_rate(measure, n)
}

/// `φ(n) = ∫ [n p - 1 + (1-p)^n] ν(dp)` plus `atom0 · C(n,2)`, the rate of
/// decrease of the block count.
pub fn phi(measure: &LambdaMeasure, n: u64) -> f64 {
    if n < 2 {
        return 0.0;
    }
    measure.atom0() * binomial(n, 2) + kernel_integral(measure, n, &|p, q| phi_over_p2(n, p, q))
}

/// `φ(n+1) - φ(n)` from its own integral form `∫ p (1 - (1-p)^n) ν(dp)` plus
/// `atom0 · n`.
pub fn phi_increment(measure: &LambdaMeasure, n: u64) -> f64 {
    measure.atom0() * n as f64 + kernel_integral(measure, n.max(1), &|p, q| increment_over_p2(n, p, q))
}

/// `Φ(n) = ∫ (1-p)^{-1} [n p - 1 + (1-p)^n] ν(dp)` plus `atom0 · C(n,2)`.
/// `+∞` when `Λ` charges the neighbourhood of 1 too heavily.
pub fn capital_phi(measure: &LambdaMeasure, n: u64) -> f64 {
    if n < 2 {
        return 0.0;
    }
    measure.atom0() * binomial(n, 2) + kernel_integral(measure, n, &|p, q| capital_phi_over_p2(n, p, q))
}

/// `μ = ∫ Λ(dp) / (p (1 - p))`.
pub fn mu_threshold(measure: &LambdaMeasure) -> Result<f64, RatesError> {
    if measure.atom0() > 0.0 {
        return Err(RatesError::AtomAtZeroPresent(measure.atom0()));
    }
    let mut total = 0.0;
    for c in measure.components() {
        match *c {
            Component::PointMass { location, mass } => total += mass / (location * (1.0 - location)),
            _ => {
                let (a, b, m) = c.density().expect("density component");
                if a <= 1.0 || b <= 1.0 {
                    return Ok(f64::INFINITY);
                }
                total += m * (ln_beta(a - 1.0, b - 1.0) - ln_beta(a, b)).exp();
            }
        }
    }
    Ok(total)
}

/// Dense table of `λ_{k,ℓ}` and `λ_n` for `2 <= ℓ <= k <= k_max`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RateTable {
    k_max: u64,
    /// Row `k - 2` holds `λ_{k,2}, ..., λ_{k,k}`.
    lambda: Vec<Vec<f64>>,
    /// Entry `n - 2` holds `λ_n`.
    total: Vec<f64>,
}

impl RateTable {
    pub fn new(measure: &LambdaMeasure, k_max: u64) -> Self {
        let k_max = k_max.max(2);
        let lambda = (2..=k_max)
            .map(|k| (2..=k).map(|l| lambda_rate(measure, k, l)).collect())
            .collect();
        let total = (2..=k_max).map(|n| total_rate(measure, n)).collect();
        Self { k_max, lambda, total }
    }

    pub fn k_max(&self) -> u64 {
        self.k_max
    }

    /// `λ_{k,ℓ}`.
    ///
    /// # Panics
    /// If the indices are outside the table.
    pub fn lambda(&self, k: u64, l: u64) -> f64 {
        self.lambda[(k - 2) as usize][(l - 2) as usize]
    }

    /// `λ_n`.
    pub fn total(&self, n: u64) -> f64 {
        self.total[(n - 2) as usize]
    }

    /// Largest relative gap between `λ_n` and `Σ_ℓ C(n,ℓ) λ_{n,ℓ}` over the table.
    pub fn max_consistency_gap(&self) -> f64 {
        (2..=self.k_max)
            .map(|n| {
                let sum: f64 = (2..=n).map(|l| binomial(n, l) * self.lambda(n, l)).sum();
                (self.total(n) - sum).abs() / (1.0 + self.total(n))
            })
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    ComesDown,
    StaysInfinite,
    Inconclusive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Rationale {
    AtomAtZero,
    FiniteDustIntegral,
    AnalyticFamily,
    NumericHeuristic,
}

/// Outcome of [`cdi_classify`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CdiVerdict {
    pub verdict: Verdict,
    pub rationale: Rationale,
    /// `(m, Σ_{n=2}^m 1/φ(n))` at checkpoints `m`.
    pub partial_sums: Vec<(u64, f64)>,
    /// Local slope of `log φ(n)` against `log n` near `n_max`.
    pub growth_exponent: f64,
}

/// Growth exponent above which the series `Σ 1/φ(n)` is declared convergent.
const COMES_DOWN_EXPONENT: f64 = 1.2;
/// Growth exponent below which the series is declared divergent.
const STAYS_INFINITE_EXPONENT: f64 = 1.02;
/// Below this `n`, `φ(n)` is evaluated at every integer.
const EXACT_PHI_UP_TO: u64 = 64;

/// Classifies whether the `Λ`-coalescent comes down from infinity, i.e.
/// whether `Σ_n 1/φ(n) < ∞`.
///
/// Analytic rules are tried first (atom at zero, finite dust integral
/// `∫ p ν(dp)`, and with `analytic_hints` the Beta family by its first
/// shape parameter). Otherwise the growth exponent of `φ` near `n_max`
/// decides, and an ambiguous exponent yields [`Verdict::Inconclusive`].
pub fn cdi_classify(measure: &LambdaMeasure, n_max: u64, analytic_hints: bool) -> CdiVerdict {
    let n_max = n_max.max(8);
    let (partial_sums, growth_exponent) = phi_series(measure, n_max);
    let done = |verdict, rationale| CdiVerdict {
        verdict,
        rationale,
        partial_sums: partial_sums.clone(),
        growth_exponent,
    };
    if measure.atom0() > 0.0 {
        return done(Verdict::ComesDown, Rationale::AtomAtZero);
    }
    if measure.moment(-1.0).is_finite() {
        return done(Verdict::StaysInfinite, Rationale::FiniteDustIntegral);
    }
    if analytic_hints {
        // Only Beta components with a <= 1 reach this point. Near zero such a
        // component has φ(n) growing like n^{2-a} (a < 1) or n log n (a = 1).
        let min_a = measure
            .components()
            .iter()
            .filter_map(Component::density)
            .map(|(a, _, _)| a)
            .fold(f64::INFINITY, f64::min);
        if min_a < 1.0 {
            return done(Verdict::ComesDown, Rationale::AnalyticFamily);
        }
        if min_a == 1.0 {
            return done(Verdict::StaysInfinite, Rationale::AnalyticFamily);
        }
    }
    let verdict = if growth_exponent >= COMES_DOWN_EXPONENT {
        Verdict::ComesDown
    } else if growth_exponent <= STAYS_INFINITE_EXPONENT {
        Verdict::StaysInfinite
    } else {
        Verdict::Inconclusive
    };
    done(verdict, Rationale::NumericHeuristic)
}

/// Partial sums of `1/φ(n)` at power-of-two checkpoints and the final
/// log-log slope of `φ`. Beyond [`EXACT_PHI_UP_TO`], `φ` is evaluated on a
/// geometric grid and interpolated linearly in log-log coordinates.
fn phi_series(measure: &LambdaMeasure, n_max: u64) -> (Vec<(u64, f64)>, f64) {
    let mut checkpoints = Vec::new();
    let mut sum = 0.0;
    let mut next_check = 4;
    let record = |n: u64, sum: f64, checkpoints: &mut Vec<(u64, f64)>, next_check: &mut u64| {
        if n == *next_check || n == n_max {
            checkpoints.push((n, sum));
            *next_check *= 2;
        }
    };
    for n in 2..=n_max.min(EXACT_PHI_UP_TO) {
        sum += 1.0 / phi(measure, n);
        record(n, sum, &mut checkpoints, &mut next_check);
    }
    let mut grid = vec![EXACT_PHI_UP_TO];
    while *grid.last().unwrap() < n_max {
        let g = *grid.last().unwrap();
        grid.push(((g as f64 * 2f64.powf(0.25)).ceil() as u64).min(n_max));
    }
    let values: Vec<f64> = grid.iter().map(|&n| phi(measure, n)).collect();
    for w in 0..grid.len().saturating_sub(1) {
        let (n0, n1) = (grid[w], grid[w + 1]);
        let (l0, l1) = ((n0 as f64).ln(), (n1 as f64).ln());
        let (f0, f1) = (values[w].ln(), values[w + 1].ln());
        let slope = (f1 - f0) / (l1 - l0);
        for n in n0 + 1..=n1 {
            let v = (f0 + slope * ((n as f64).ln() - l0)).exp();
            sum += 1.0 / v;
            record(n, sum, &mut checkpoints, &mut next_check);
        }
    }
    let growth = if grid.len() >= 2 {
        let k = grid.len() - 1;
        let j = k.saturating_sub(4);
        (values[k].ln() - values[j].ln()) / ((grid[k] as f64).ln() - (grid[j] as f64).ln())
    } else {
        let a = (n_max / 2).max(2);
        (phi(measure, n_max).ln() - phi(measure, a).ln()) / ((n_max as f64).ln() - (a as f64).ln())
    };
    (checkpoints, growth)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(1e-300)
    }

    #[test]
    fn lambda_rate_examples() {
        let u = LambdaMeasure::uniform(1.0);
        assert!(rel(lambda_rate(&u, 2, 2), 1.0) < 1e-13);
        assert!(rel(lambda_rate(&u, 4, 3), 1.0 / 6.0) < 1e-13);
        let k = LambdaMeasure::kingman(0.7);
        assert_eq!(lambda_rate(&k, 5, 2), 0.7);
        assert_eq!(lambda_rate(&k, 5, 3), 0.0);
    }

    #[test]
    fn total_rate_examples() {
        let u = LambdaMeasure::uniform(1.0);
        assert!(rel(total_rate(&u, 5), 4.0) < 1e-10);
        let b = LambdaMeasure::beta(0.5, 1.5, 0.3);
        assert!(rel(total_rate(&b, 2), 0.3) < 1e-10, "{}", total_rate(&b, 2));
        assert!(rel(total_rate(&LambdaMeasure::kingman(0.5), 4), 3.0) < 1e-15);
    }

    #[test]
    fn phi_examples() {
        let u = LambdaMeasure::uniform(1.0);
        assert!(rel(phi(&u, 2), 1.0) < 1e-10);
        assert!(rel(phi(&u, 3), 2.5) < 1e-10);
        assert!(rel(phi(&LambdaMeasure::kingman(2.0), 5), 20.0) < 1e-15);
    }

    #[test]
    fn capital_phi_examples() {
        assert!(capital_phi(&LambdaMeasure::uniform(1.0), 2).is_infinite());
        let pm = LambdaMeasure::point_mass(0.5, 0.1);
        assert!(rel(capital_phi(&pm, 3), 0.5) < 1e-14);
        assert_eq!(capital_phi(&pm, 1), 0.0);
    }

    #[test]
    fn mu_threshold_examples() {
        assert!(rel(mu_threshold(&LambdaMeasure::point_mass(0.5, 0.1)).unwrap(), 0.4) < 1e-14);
        assert!(rel(mu_threshold(&LambdaMeasure::point_mass(0.5, 0.3)).unwrap(), 1.2) < 1e-14);
        assert!(mu_threshold(&LambdaMeasure::uniform(1.0)).unwrap().is_infinite());
        assert!(matches!(
            mu_threshold(&LambdaMeasure::kingman(1.0)),
            Err(RatesError::AtomAtZeroPresent(_))
        ));
        // Beta(3, 3): 30 ∫ p (1-p) dp = 5.
        assert!(rel(mu_threshold(&LambdaMeasure::beta(3.0, 3.0, 1.0)).unwrap(), 5.0) < 1e-12);
    }

    #[test]
    fn cdi_examples() {
        let v = cdi_classify(&LambdaMeasure::kingman(1.0), 1000, true);
        assert_eq!((v.verdict, v.rationale), (Verdict::ComesDown, Rationale::AtomAtZero));
        let v = cdi_classify(&LambdaMeasure::uniform(1.0), 1000, true);
        assert_eq!((v.verdict, v.rationale), (Verdict::StaysInfinite, Rationale::AnalyticFamily));
        let v = cdi_classify(&LambdaMeasure::point_mass(0.5, 0.1), 1000, true);
        assert_eq!((v.verdict, v.rationale), (Verdict::StaysInfinite, Rationale::FiniteDustIntegral));
        assert!(v.partial_sums.windows(2).all(|w| w[1].1 > w[0].1));
    }

    #[test]
    fn cdi_numeric_fallback() {
        // Beta(0.5, 1.5): φ(n) grows like n^{1.5}.
        let v = cdi_classify(&LambdaMeasure::beta(0.5, 1.5, 1.0), 100_000, false);
        assert_eq!((v.verdict, v.rationale), (Verdict::ComesDown, Rationale::NumericHeuristic));
        assert!((v.growth_exponent - 1.5).abs() < 0.05, "{}", v.growth_exponent);
        // Uniform: φ(n) ~ n log n, slope about 1.1 at this size.
        let v = cdi_classify(&LambdaMeasure::uniform(1.0), 100_000, false);
        assert_ne!(v.verdict, Verdict::ComesDown);
    }

    #[test]
    fn table_is_self_consistent() {
        let t = RateTable::new(&LambdaMeasure::beta(0.7, 2.5, 1.3), 40);
        assert!(t.max_consistency_gap() < 1e-8, "{}", t.max_consistency_gap());
    }
}
