//! The driving measure `Λ` on `[0, 1]`, integrals against `Λ` and against
//! `ν(dp) = p⁻² Λ(dp)`, and samplers for reproduction-event sizes.

use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};
use statrs::function::beta::{beta_reg, ln_beta};

use crate::error::MeasureError;
use crate::quad::integrate_unit;
use crate::special::{ln_q, total_over_p2};

/// Width of the end pieces that are handled by power-law extrapolation
/// instead of quadrature.
const TAIL: f64 = 1e-6;
const QUAD_REL_TOL: f64 = 1e-12;

/// One absolutely continuous or atomic piece of `Λ` on `(0, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Component {
    PointMass { location: f64, mass: f64 },
    /// `mass` times the Beta(a, b) probability density.
    Beta { a: f64, b: f64, mass: f64 },
    /// `mass` times Lebesgue measure on `(0, 1)`.
    Uniform { mass: f64 },
}

impl Component {
    pub fn mass(&self) -> f64 {
        match *self {
            Component::PointMass { mass, .. }
            | Component::Beta { mass, .. }
            | Component::Uniform { mass } => mass,
        }
    }

    /// Shape parameters and mass of a density component.
    pub(crate) fn density(&self) -> Option<(f64, f64, f64)> {
        match *self {
            Component::PointMass { .. } => None,
            Component::Beta { a, b, mass } => Some((a, b, mass)),
            Component::Uniform { mass } => Some((1.0, 1.0, mass)),
        }
    }

    fn validate(&self) -> Result<(), String> {
        let m = self.mass();
        if !(m.is_finite() && m >= 0.0) {
            return Err(format!("component mass must be finite and nonnegative, got {m}"));
        }
        match *self {
            Component::PointMass { location, .. } => {
                if !(location > 0.0 && location < 1.0) {
                    return Err(format!("point mass location must lie in (0, 1), got {location}"));
                }
            }
            Component::Beta { a, b, .. } => {
                if !(a.is_finite() && a > 0.0 && b.is_finite() && b > 0.0) {
                    return Err(format!("beta shapes must be finite and positive, got a={a}, b={b}"));
                }
            }
            Component::Uniform { .. } => {}
        }
        Ok(())
    }
}

/// Whether a divergent integral is reported as `±∞` or as an error.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Divergence {
    Allow,
    Forbid,
}

/// A finite measure on `[0, 1]` with no mass at 1: an atom at 0 plus a
/// finite list of point masses and Beta densities on `(0, 1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMeasure", into = "RawMeasure")]
pub struct LambdaMeasure {
    atom0: f64,
    components: Vec<Component>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMeasure {
    #[serde(default)]
    atom0: f64,
    #[serde(default)]
    components: Vec<Component>,
}

impl TryFrom<RawMeasure> for LambdaMeasure {
    type Error = MeasureError;
    fn try_from(raw: RawMeasure) -> Result<Self, Self::Error> {
        LambdaMeasure::new(raw.atom0, raw.components)
    }
}

impl From<LambdaMeasure> for RawMeasure {
    fn from(m: LambdaMeasure) -> Self {
        RawMeasure {
            atom0: m.atom0,
            components: m.components,
        }
    }
}

impl LambdaMeasure {
    pub fn new(atom0: f64, components: Vec<Component>) -> Result<Self, MeasureError> {
        if !(atom0.is_finite() && atom0 >= 0.0) {
            return Err(MeasureError::InvalidMeasure(format!(
                "atom0 must be finite and nonnegative, got {atom0}"
            )));
        }
        for c in &components {
            c.validate().map_err(MeasureError::InvalidMeasure)?;
        }
        let components: Vec<Component> = components.into_iter().filter(|c| c.mass() > 0.0).collect();
        let m = Self { atom0, components };
        if m.total_mass() <= 0.0 {
            return Err(MeasureError::InvalidMeasure("total mass must be positive".into()));
        }
        Ok(m)
    }

    /// `mass` times Lebesgue measure (the Bolthausen-Sznitman case for mass 1).
    ///
    /// # Panics
    /// If `mass` is not a positive finite number.
    pub fn uniform(mass: f64) -> Self {
        Self::new(0.0, vec![Component::Uniform { mass }]).expect("invalid uniform measure")
    }

    /// `c δ_0` (Kingman's coalescent for `c = 1`).
    ///
    /// # Panics
    /// If `c` is not a positive finite number.
    pub fn kingman(c: f64) -> Self {
        Self::new(c, Vec::new()).expect("invalid atom at zero")
    }

    /// `mass δ_location`.
    ///
    /// # Panics
    /// If the location is outside `(0, 1)` or the mass is not positive.
    pub fn point_mass(location: f64, mass: f64) -> Self {
        Self::new(0.0, vec![Component::PointMass { location, mass }]).expect("invalid point mass")
    }

    /// `mass` times the Beta(a, b) density.
    ///
    /// # Panics
    /// If a shape is not positive or the mass is not positive.
    pub fn beta(a: f64, b: f64, mass: f64) -> Self {
        Self::new(0.0, vec![Component::Beta { a, b, mass }]).expect("invalid beta measure")
    }

    pub fn atom0(&self) -> f64 {
        self.atom0
    }

    pub fn components(&self) -> &[Component] {
        &self.components
    }

    /// `Λ([0, 1])`.
    pub fn total_mass(&self) -> f64 {
        self.atom0 + self.components.iter().map(Component::mass).sum::<f64>()
    }

    /// `Λ((0, 1))`.
    pub fn continuous_mass(&self) -> f64 {
        self.components.iter().map(Component::mass).sum()
    }

    /// `μ_r = ∫ p^r Λ(dp)`, `+∞` when the integral diverges.
    pub fn moment(&self, r: f64) -> f64 {
        let mut total = if self.atom0 > 0.0 {
            if r == 0.0 {
                self.atom0
            } else if r > 0.0 {
                0.0
            } else {
                return f64::INFINITY;
            }
        } else {
            0.0
        };
        for c in &self.components {
            match *c {
                Component::PointMass { location, mass } => total += mass * location.powf(r),
                _ => {
                    let (a, b, m) = c.density().expect("density component");
                    if a + r <= 0.0 {
                        return f64::INFINITY;
                    }
                    total += m * (ln_beta(a + r, b) - ln_beta(a, b)).exp();
                }
            }
        }
        total
    }

    /// `Λ((0, ε))`, the variance rate carried by jumps smaller than `ε`.
    pub fn small_jump_variance(&self, eps: f64) -> f64 {
        let mut total = 0.0;
        for c in &self.components {
            match *c {
                Component::PointMass { location, mass } => {
                    if location < eps {
                        total += mass;
                    }
                }
                _ => {
                    let (a, b, m) = c.density().expect("density component");
                    total += m * if eps >= 1.0 { 1.0 } else { beta_reg(a, b, eps) };
                }
            }
        }
        total
    }

    /// `ν([ε, 1])`, the rate of events of size at least `ε`.
    pub fn nu_tail_mass(&self, eps: f64) -> f64 {
        self.components.iter().map(|c| component_nu_tail(c, eps)).sum()
    }

    /// `∫_{[a,b]} f(p) ν(dp)`; `a = 0` means the half-open domain `(0, b]`.
    ///
    /// The atom at zero never contributes.
    pub fn nu_integral<F>(&self, f: &F, a: f64, b: f64, policy: Divergence) -> Result<f64, MeasureError>
    where
        F: Fn(f64) -> f64 + ?Sized,
    {
        // f(p)/p² is formed naively, so near 0 it is dominated by rounding;
        // the first TAIL of the domain is extrapolated instead of sampled.
        self.integral_impl(&|p: f64, _q: f64| f(p) / (p * p), a, b, &[], policy, true)
    }

    /// `∫_{[a,b]} g(p, 1 - p) Λ(dp)` over `(0, 1)`; the atom at zero is excluded.
    ///
    /// Callers with kernels vanishing like `p²` pass `g = kernel / p²` in a
    /// cancellation-free form and get the `ν` integral of the kernel.
    pub fn lambda_integral<G>(&self, g: &G, a: f64, b: f64, policy: Divergence) -> Result<f64, MeasureError>
    where
        G: Fn(f64, f64) -> f64 + ?Sized,
    {
        self.lambda_integral_with_breaks(g, a, b, &[], policy)
    }

    /// As [`lambda_integral`](Self::lambda_integral), with extra quadrature
    /// breakpoints at interior points where `g` changes scale sharply.
    pub fn lambda_integral_with_breaks<G>(
        &self,
        g: &G,
        a: f64,
        b: f64,
        breaks: &[f64],
        policy: Divergence,
    ) -> Result<f64, MeasureError>
    where
        G: Fn(f64, f64) -> f64 + ?Sized,
    {
        self.integral_impl(g, a, b, breaks, policy, false)
    }

    fn integral_impl<G>(
        &self,
        g: &G,
        a: f64,
        b: f64,
        breaks: &[f64],
        policy: Divergence,
        extrapolate_lower: bool,
    ) -> Result<f64, MeasureError>
    where
        G: Fn(f64, f64) -> f64 + ?Sized,
    {
        if !(0.0..=1.0).contains(&a) || !(0.0..=1.0).contains(&b) || a > b {
            return Err(MeasureError::InvalidMeasure(format!(
                "integration domain [{a}, {b}] is not inside [0, 1]"
            )));
        }
        let mut total = 0.0;
        for c in &self.components {
            match *c {
                Component::PointMass { location, mass } => {
                    if location >= a && location <= b {
                        total += mass * g(location, 1.0 - location);
                    }
                }
                _ => {
                    if a < b {
                        let (sa, sb, m) = c.density().expect("density component");
                        total += m * density_integral(g, sa, sb, a, b, breaks, extrapolate_lower);
                    }
                }
            }
        }
        if total.is_nan() {
            return Err(MeasureError::NonIntegrable(format!("integrand is not integrable on [{a}, {b}]")));
        }
        if total.is_infinite() && policy == Divergence::Forbid {
            return Err(MeasureError::NonIntegrable(format!("integral over [{a}, {b}] is infinite")));
        }
        Ok(total)
    }

    /// Draws `p` from `ν` restricted to `[ε, 1)` and normalized.
    ///
    /// Builds a [`TruncatedSampler`]; simulators that draw repeatedly should
    /// keep one around instead.
    pub fn sample_p_truncated<R: Rng + ?Sized>(&self, eps: f64, rng: &mut R) -> Result<f64, MeasureError> {
        Ok(TruncatedSampler::new(self, eps)?.sample(rng).0)
    }

    /// Draws `p` with law proportional to `[1 - (1-p)^L - L p (1-p)^{L-1}] ν(dp)`.
    pub fn sample_p_birth_event<R: Rng + ?Sized>(&self, l: u64, rng: &mut R) -> Result<f64, MeasureError> {
        Ok(BirthSampler::new(self, l)?.sample(rng).0)
    }
}

/// `∫_{[a,b]} g · Beta(sa, sb) density`.
fn density_integral<G>(g: &G, sa: f64, sb: f64, a: f64, b: f64, breaks: &[f64], extrapolate_lower: bool) -> f64
where
    G: Fn(f64, f64) -> f64 + ?Sized,
{
    let lnb = ln_beta(sa, sb);
    let h = |p: f64, q: f64| {
        let v = g(p, q);
        if v == 0.0 {
            return 0.0;
        }
        v * ((sa - 1.0) * p.ln() + (sb - 1.0) * ln_q(p, q) - lnb).exp()
    };
    integrate_with_tails(&h, a, b, breaks, extrapolate_lower)
}

/// Quadrature over `[a, b]`, after checking any end touching 0 or 1 for a
/// non-integrable singularity. Returns `±∞` when `h` behaves like `x^s` with
/// `s <= -1` at such an end.
///
/// With `extrapolate_lower`, the piece `(0, TAIL]` is not sampled but
/// integrated as a power law matched at `TAIL` and `TAIL / 2`.
fn integrate_with_tails<H>(h: &H, a: f64, b: f64, breaks: &[f64], extrapolate_lower: bool) -> f64
where
    H: Fn(f64, f64) -> f64 + ?Sized,
{
    let mut total = 0.0;
    let mut start = a;
    if a == 0.0 {
        let x = TAIL.min(0.25 * b);
        let (hx, hhalf) = (h(x, 1.0 - x), h(0.5 * x, 1.0 - 0.5 * x));
        let t = divergence_sign(hx, hhalf);
        if t != 0.0 {
            return t;
        }
        if extrapolate_lower {
            total += power_tail(hx, hhalf, x);
            start = x;
        }
    }
    if b == 1.0 {
        let x = TAIL.min(0.25 * (1.0 - a));
        let t = divergence_sign(h(1.0 - x, x), h(1.0 - 0.5 * x, 0.5 * x));
        if t != 0.0 {
            return t;
        }
    }
    let first = start;
    for &x in breaks.iter().filter(|&&x| x > first && x < b) {
        total += integrate_unit(h, start, x, QUAD_REL_TOL, 0.0).value;
        start = x;
    }
    total + integrate_unit(h, start, b, QUAD_REL_TOL, 0.0).value
}

/// Integral over `(0, x]` of a function behaving like `C t^s` with `s > -1`,
/// given its values at `x` and `x / 2`.
fn power_tail(hx: f64, hhalf: f64, x: f64) -> f64 {
    if hx == 0.0 || hhalf == 0.0 || hx.signum() != hhalf.signum() {
        return 0.5 * (hx + hhalf) * x;
    }
    let s = (hx / hhalf).log2();
    hx * x / (s + 1.0)
}

/// Given values of `h` at distances `x` and `x/2` from an endpoint, returns
/// `±∞` if `h` grows at least like `1/x` there, `NaN` for non-finite values,
/// and `0` otherwise.
fn divergence_sign(hx: f64, hhalf: f64) -> f64 {
    if hx.is_nan() || hhalf.is_nan() {
        return f64::NAN;
    }
    if hx.is_infinite() || hhalf.is_infinite() {
        return if hx.is_infinite() { hx } else { hhalf };
    }
    if hx == 0.0 || hhalf == 0.0 || hx.signum() != hhalf.signum() {
        return 0.0;
    }
    let s = (hx / hhalf).log2();
    if s <= -1.0 + 1e-3 {
        hx.signum() * f64::INFINITY
    } else {
        0.0
    }
}

fn component_nu_tail(c: &Component, eps: f64) -> f64 {
    match *c {
        Component::PointMass { location, mass } => {
            if location >= eps {
                mass / (location * location)
            } else {
                0.0
            }
        }
        _ => {
            let (a, b, m) = c.density().expect("density component");
            if eps >= 1.0 {
                return 0.0;
            }
            m * density_integral(&|p: f64, _q: f64| 1.0 / (p * p), a, b, eps.max(f64::MIN_POSITIVE), 1.0, &[], false)
        }
    }
}

/// Draws from `p^{a-3} (1-p)^{b-1}` restricted to `[ε, 1)`, i.e. from `ν`
/// for one Beta(a, b) component.
#[derive(Debug, Clone)]
struct DensityTail {
    method: TailMethod,
}

#[derive(Debug, Clone)]
enum TailMethod {
    /// `p = X / (X + Y)` with `X ~ Gamma(a-2)`, `Y ~ Gamma(b)`, rejecting `p < ε`.
    GammaRatio {
        eps: f64,
        x: Gamma<f64>,
        y: Gamma<f64>,
    },
    /// Two-piece envelope split at `c = max(ε, 1/2)`: `p^{a-3}` on `[ε, c]`,
    /// `(1-p)^{b-1}` on `[c, 1)`.
    Split {
        a: f64,
        b: f64,
        eps: f64,
        c: f64,
        low_weight: f64,
        up_weight: f64,
        m_low: f64,
        m_up: f64,
    },
}

impl DensityTail {
    fn new(a: f64, b: f64, eps: f64) -> Self {
        if a > 2.0 {
            let accept = 1.0 - beta_reg(a - 2.0, b, eps);
            if accept >= 0.1 {
                return Self {
                    method: TailMethod::GammaRatio {
                        eps,
                        x: Gamma::new(a - 2.0, 1.0).expect("positive shape"),
                        y: Gamma::new(b, 1.0).expect("positive shape"),
                    },
                };
            }
        }
        let c = eps.max(0.5);
        let s1 = a - 2.0;
        let (low_weight, m_low) = if eps < c {
            let integral = if s1.abs() < 1e-12 {
                (c / eps).ln()
            } else {
                (c.powf(s1) - eps.powf(s1)) / s1
            };
            let m_low = if b >= 1.0 { (1.0 - eps).powf(b - 1.0) } else { (1.0 - c).powf(b - 1.0) };
            (m_low * integral, m_low)
        } else {
            (0.0, 0.0)
        };
        let m_up = if a <= 3.0 { c.powf(a - 3.0) } else { 1.0 };
        let up_weight = m_up * (1.0 - c).powf(b) / b;
        Self {
            method: TailMethod::Split {
                a,
                b,
                eps,
                c,
                low_weight,
                up_weight,
                m_low,
                m_up,
            },
        }
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> (f64, f64) {
        match self.method {
            TailMethod::GammaRatio { eps, ref x, ref y } => loop {
                let gx = x.sample(rng);
                let gy = y.sample(rng);
                let sum = gx + gy;
                let (p, q) = (gx / sum, gy / sum);
                if p >= eps && q > 0.0 {
                    return (p, q);
                }
            },
            TailMethod::Split {
                a,
                b,
                eps,
                c,
                low_weight,
                up_weight,
                m_low,
                m_up,
            } => loop {
                let pick = rng.random::<f64>() * (low_weight + up_weight);
                let accept = rng.random::<f64>();
                if pick < low_weight {
                    let v: f64 = rng.random();
                    let s1 = a - 2.0;
                    let p = if s1.abs() < 1e-12 {
                        eps * (c / eps).powf(v)
                    } else {
                        let lo = eps.powf(s1);
                        (lo + v * (c.powf(s1) - lo)).powf(1.0 / s1)
                    };
                    let p = p.clamp(eps, c);
                    let q = 1.0 - p;
                    if accept * m_low <= q.powf(b - 1.0) {
                        return (p, q);
                    }
                } else {
                    let v = 1.0 - rng.random::<f64>();
                    let q = (1.0 - c) * v.powf(1.0 / b);
                    if q <= 0.0 {
                        continue;
                    }
                    let p = 1.0 - q;
                    if accept * m_up <= p.powf(a - 3.0) {
                        return (p, q);
                    }
                }
            },
        }
    }
}

#[derive(Debug, Clone)]
enum TruncPart {
    Point { p: f64 },
    Density(DensityTail),
}

/// Sampler for `ν` restricted to `[ε, 1)`, normalized. Draws return
/// `(p, 1 - p)` with the complement computed without cancellation.
#[derive(Debug, Clone)]
pub struct TruncatedSampler {
    eps: f64,
    rate: f64,
    cumulative: Vec<f64>,
    parts: Vec<TruncPart>,
}

impl TruncatedSampler {
    pub fn new(measure: &LambdaMeasure, eps: f64) -> Result<Self, MeasureError> {
        if !(eps > 0.0 && eps < 1.0) {
            return Err(MeasureError::InvalidMeasure(format!("cutoff must lie in (0, 1), got {eps}")));
        }
        let mut cumulative = Vec::new();
        let mut parts = Vec::new();
        let mut acc = 0.0;
        for c in measure.components() {
            let w = component_nu_tail(c, eps);
            if w <= 0.0 {
                continue;
            }
            acc += w;
            cumulative.push(acc);
            parts.push(match *c {
                Component::PointMass { location, .. } => TruncPart::Point { p: location },
                _ => {
                    let (a, b, _) = c.density().expect("density component");
                    TruncPart::Density(DensityTail::new(a, b, eps))
                }
            });
        }
        if acc <= 0.0 {
            return Err(MeasureError::EmptySupport(eps));
        }
        Ok(Self {
            eps,
            rate: acc,
            cumulative,
            parts,
        })
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    /// `ν([ε, 1])`, the total event rate.
    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> (f64, f64) {
        let i = pick(&self.cumulative, rng);
        match &self.parts[i] {
            TruncPart::Point { p } => (*p, 1.0 - *p),
            TruncPart::Density(d) => d.sample(rng),
        }
    }
}

fn pick<R: Rng + ?Sized>(cumulative: &[f64], rng: &mut R) -> usize {
    let total = *cumulative.last().expect("nonempty");
    let u = rng.random::<f64>() * total;
    cumulative.iter().position(|&c| u < c).unwrap_or(cumulative.len() - 1)
}

#[derive(Debug, Clone)]
enum BirthPart {
    Point { p: f64 },
    /// `C(L,2) Λ` restricted to `(0, ε_L)` for one Beta component.
    Low { a: f64, b: f64, cap: f64, x: Gamma<f64>, y: Gamma<f64> },
    /// `ν` restricted to `[ε_L, 1)` for one Beta component.
    High(DensityTail),
}

/// Sampler for the size of a reproduction event that involves at least two
/// of the first `L` levels.
///
/// Rejection against the envelope `min(1, C(L,2) p²) ν(dp)`, which dominates
/// the target weight and has finite mass.
#[derive(Debug, Clone)]
pub struct BirthSampler {
    l: u64,
    c2: f64,
    cumulative: Vec<f64>,
    parts: Vec<BirthPart>,
}

impl BirthSampler {
    pub fn new(measure: &LambdaMeasure, l: u64) -> Result<Self, MeasureError> {
        if l < 2 {
            return Err(MeasureError::InvalidMeasure(format!("birth events need L >= 2, got {l}")));
        }
        let c2 = (l * (l - 1) / 2) as f64;
        let eps_l = (1.0 / c2.sqrt()).min(1.0);
        let mut cumulative = Vec::new();
        let mut parts = Vec::new();
        let mut acc = 0.0;
        let mut push = |w: f64, part: BirthPart, cumulative: &mut Vec<f64>, parts: &mut Vec<BirthPart>| {
            if w > 0.0 {
                acc += w;
                cumulative.push(acc);
                parts.push(part);
            }
        };
        for c in measure.components() {
            match *c {
                Component::PointMass { location, mass } => {
                    let w = mass * total_over_p2(l, location, 1.0 - location);
                    push(w, BirthPart::Point { p: location }, &mut cumulative, &mut parts);
                }
                _ => {
                    let (a, b, m) = c.density().expect("density component");
                    let low_mass = if eps_l >= 1.0 { 1.0 } else { beta_reg(a, b, eps_l) };
                    let low = BirthPart::Low {
                        a,
                        b,
                        cap: eps_l,
                        x: Gamma::new(a, 1.0).expect("positive shape"),
                        y: Gamma::new(b, 1.0).expect("positive shape"),
                    };
                    push(c2 * m * low_mass, low, &mut cumulative, &mut parts);
                    if eps_l < 1.0 {
                        let w = component_nu_tail(c, eps_l);
                        push(w, BirthPart::High(DensityTail::new(a, b, eps_l)), &mut cumulative, &mut parts);
                    }
                }
            }
        }
        if cumulative.is_empty() {
            return Err(MeasureError::EmptySupport(0.0));
        }
        Ok(Self {
            l,
            c2,
            cumulative,
            parts,
        })
    }

    pub fn levels(&self) -> u64 {
        self.l
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> (f64, f64) {
        loop {
            let i = pick(&self.cumulative, rng);
            match &self.parts[i] {
                BirthPart::Point { p } => return (*p, 1.0 - *p),
                BirthPart::Low { a, b, cap, x, y } => {
                    let (p, q) = sample_beta_below(*a, *b, *cap, x, y, rng);
                    // Envelope is C(L,2) p² here.
                    if rng.random::<f64>() * self.c2 <= total_over_p2(self.l, p, q) {
                        return (p, q);
                    }
                }
                BirthPart::High(d) => {
                    let (p, q) = d.sample(rng);
                    // Envelope is 1 here.
                    if rng.random::<f64>() <= total_over_p2(self.l, p, q) * p * p {
                        return (p, q);
                    }
                }
            }
        }
    }
}

/// Beta(a, b) conditioned on `p < cap`.
fn sample_beta_below<R: Rng + ?Sized>(a: f64, b: f64, cap: f64, x: &Gamma<f64>, y: &Gamma<f64>, rng: &mut R) -> (f64, f64) {
    if cap >= 0.5 {
        loop {
            let gx = x.sample(rng);
            let gy = y.sample(rng);
            let s = gx + gy;
            let (p, q) = (gx / s, gy / s);
            if p < cap && p > 0.0 {
                return (p, q);
            }
        }
    }
    let m = if b >= 1.0 { 1.0 } else { (1.0 - cap).powf(b - 1.0) };
    loop {
        let v = 1.0 - rng.random::<f64>();
        let p = cap * v.powf(1.0 / a);
        if p <= 0.0 {
            continue;
        }
        let q = 1.0 - p;
        if rng.random::<f64>() * m <= q.powf(b - 1.0) {
            return (p, q);
        }
    }
}
