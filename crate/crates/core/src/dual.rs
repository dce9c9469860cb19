//! The block-counting dual `R_t`, the level `K_t` of the first `B`
//! individual, and numerical checks of the moment duality
//! `E[X_t^n | X_0 = x] = E[x^{R_t} | R_0 = n]`.

use std::collections::hash_map::Entry;
use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::DualError;
use crate::measure::{Divergence, LambdaMeasure};
use crate::parallel::map_replicas;
use crate::path::{validate_grid, Path};
use crate::rates::{lambda_rate, merger_rate, RateTable};
use crate::rng::purpose_stream;
use crate::sde::{SdeConfig, SdeEngine};
use crate::special::{binomial, ln_binomial, phi_over_p2};
use crate::stats::SummaryStats;

/// Default size of the merger-rate table used by [`DualEngine`].
pub const DEFAULT_TABLE_SIZE: u64 = 64;

/// Current state of a dual chain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DualState {
    pub k: u64,
    pub clock: f64,
}

/// Transition rates of `R_t`: `k -> k-ℓ+1` at `C(k,ℓ) λ_{k,ℓ}` and
/// `k -> k+1` at `αk`.
#[derive(Debug, Clone)]
pub struct DualEngine {
    measure: LambdaMeasure,
    alpha: f64,
    /// Row `k - 2` holds the cumulative merger rates for `ℓ = 2..=k`.
    rows: Vec<Vec<f64>>,
}

impl DualEngine {
    pub fn new(measure: &LambdaMeasure, alpha: f64, table_size: u64) -> Result<Self, DualError> {
        if !(alpha.is_finite() && alpha >= 0.0) {
            return Err(DualError::Config(format!("alpha must be finite and nonnegative, got {alpha}")));
        }
        let table = RateTable::new(measure, table_size);
        let rows = (2..=table.k_max())
            .map(|k| {
                let mut acc = 0.0;
                (2..=k)
                    .map(|l| {
                        acc += binomial(k, l) * table.lambda(k, l);
                        acc
                    })
                    .collect()
            })
            .collect();
        Ok(Self {
            measure: measure.clone(),
            alpha,
            rows,
        })
    }

    /// Cumulative merger rates from state `k`, from the table when possible.
    fn cumulative(&self, k: u64) -> Vec<f64> {
        if let Some(row) = self.rows.get((k as usize).wrapping_sub(2)) {
            return row.clone();
        }
        let mut acc = 0.0;
        (2..=k)
            .map(|l| {
                acc += merger_rate(&self.measure, k, l);
                acc
            })
            .collect()
    }

    /// Total merger rate out of state `k`.
    pub fn down_rate(&self, k: u64) -> f64 {
        if k < 2 {
            return 0.0;
        }
        match self.rows.get((k - 2) as usize) {
            Some(row) => *row.last().expect("nonempty row"),
            None => *self.cumulative(k).last().expect("nonempty row"),
        }
    }

    /// Gillespie simulation of `R_t` from `n0`, recorded at `grid` times up to `t_end`.
    pub fn simulate<R: Rng + ?Sized>(&self, n0: u64, t_end: f64, grid: &[f64], rng: &mut R) -> Result<Path, DualError> {
        if n0 < 1 {
            return Err(DualError::Config("the dual starts from at least one block".into()));
        }
        validate_grid(grid).map_err(DualError::Config)?;
        let mut path = Path::default();
        let mut grid = grid.iter().copied().filter(|&g| g <= t_end).peekable();
        let mut state = DualState { k: n0, clock: 0.0 };
        // Rows beyond the table are recomputed on demand; only the latest is kept.
        let mut spill: Option<(u64, Vec<f64>)> = None;
        loop {
            let row: &[f64] = if state.k < 2 {
                &[]
            } else if let Some(row) = self.rows.get((state.k - 2) as usize) {
                row
            } else {
                if spill.as_ref().map(|s| s.0) != Some(state.k) {
                    spill = Some((state.k, self.cumulative(state.k)));
                }
                &spill.as_ref().expect("just filled").1
            };
            let down = row.last().copied().unwrap_or(0.0);
            let up = self.alpha * state.k as f64;
            let total = down + up;
            let next = if total > 0.0 {
                state.clock - (1.0 - rng.random::<f64>()).ln() / total
            } else {
                f64::INFINITY
            };
            while let Some(&g) = grid.peek() {
                if g < next {
                    path.push(g, state.k as f64);
                    grid.next();
                } else {
                    break;
                }
            }
            if next > t_end {
                break;
            }
            state.clock = next;
            let u = rng.random::<f64>() * total;
            if u < down {
                let idx = row.iter().position(|&c| u < c).unwrap_or(row.len() - 1);
                // Merging ℓ = idx + 2 blocks into one.
                state.k -= idx as u64 + 1;
            } else {
                state.k += 1;
            }
        }
        Ok(path)
    }
}

/// Single path of `R_t`.
pub fn simulate_r<R: Rng + ?Sized>(
    measure: &LambdaMeasure,
    alpha: f64,
    n0: u64,
    t_end: f64,
    grid: &[f64],
    rng: &mut R,
) -> Result<Path, DualError> {
    DualEngine::new(measure, alpha, DEFAULT_TABLE_SIZE.min(n0.max(2)))?.simulate(n0, t_end, grid, rng)
}

/// Both sides of the generator identity for `g(z) = z^n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeneratorCheck {
    /// Generator of `X` applied to `z^n`, with the jump part integrated
    /// against `Λ` by quadrature.
    pub forward: f64,
    /// Generator of `R` applied to `z^{(·)}` at `n`, from closed-form rates.
    pub dual: f64,
    pub residual: f64,
}

/// Evaluates both generators on `z^n`.
pub fn generator_sides(measure: &LambdaMeasure, alpha: f64, n: u64, z: f64) -> Result<GeneratorCheck, DualError> {
    if n < 1 {
        return Err(DualError::Config("n must be at least 1".into()));
    }
    if !(0.0..=1.0).contains(&z) {
        return Err(DualError::Config(format!("z must lie in [0, 1], got {z}")));
    }
    let zn = z.powi(n as i32);
    let selection = alpha * n as f64 * (z * zn - zn);

    // ∫ ν(dp) [z (z + p(1-z))^n + (1-z) (z(1-p))^n - z^n], split so that each
    // piece over p² is regular at 0.
    let w = 1.0 - z;
    let jump = |p: f64, q: f64| {
        let mut tail = 0.0;
        for k in 2..=n {
            tail += binomial(n, k) * z.powi((n - k) as i32) * w.powi(k as i32) * p.powi((k - 2) as i32);
        }
        z * tail + w * zn * phi_over_p2(n, p, q)
    };
    let breaks = [0.1 / n as f64, 1.0 / n as f64];
    let jumps = measure
        .lambda_integral_with_breaks(&jump, 0.0, 1.0, &breaks, Divergence::Forbid)
        .map_err(|e| DualError::Config(e.to_string()))?;
    let brownian = if n >= 2 {
        measure.atom0() * binomial(n, 2) * (z.powi((n - 1) as i32) - zn)
    } else {
        0.0
    };
    let forward = selection + brownian + jumps;

    let mut merges = 0.0;
    for l in 2..=n {
        merges += merger_rate(measure, n, l) * (z.powi((n - l + 1) as i32) - zn);
    }
    let dual = merges + selection;
    Ok(GeneratorCheck {
        forward,
        dual,
        residual: (forward - dual).abs(),
    })
}

/// `|L z^n - L* z^{(·)}(n)|`, analytically zero.
pub fn generator_identity_check(measure: &LambdaMeasure, alpha: f64, n: u64, z: f64) -> Result<f64, DualError> {
    Ok(generator_sides(measure, alpha, n, z)?.residual)
}

/// Which up-jump rate to use for `K_t`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KVariant {
    /// `n -> n+k` at `C(n+k-1, k+1) λ_{n+k, k+1}`.
    #[default]
    Itemized,
    /// `n -> n+k` at `C(n+k-1, k+1) λ_{n+k-1, k+1}`.
    Display,
}

/// Cap on the number of up-jump sizes summed before giving up.
pub const K_TERM_CAP: u64 = 100_000;

/// Relative size of the last term at which the up-jump series is cut.
pub const K_TRUNCATION: f64 = 1e-12;

/// Up-jump rates of `K_t` from state `n`; entry `k - 1` is the rate to `n + k`.
///
/// The series is cut once its terms decay geometrically below
/// [`K_TRUNCATION`] times the running sum. Series that decay only
/// polynomially hit [`K_TERM_CAP`] and are reported as divergent.
pub fn k_up_rates(measure: &LambdaMeasure, n: u64, variant: KVariant) -> Result<Vec<f64>, DualError> {
    if n < 2 {
        return Ok(Vec::new());
    }
    let mut rates = Vec::new();
    let mut acc = 0.0;
    let mut prev = f64::INFINITY;
    for k in 1..=K_TERM_CAP {
        let lam = match variant {
            KVariant::Itemized => lambda_rate(measure, n + k, k + 1),
            KVariant::Display => lambda_rate(measure, n + k - 1, k + 1),
        };
        let term = if lam > 0.0 {
            (ln_binomial(n + k - 1, k + 1) + lam.ln()).exp()
        } else {
            0.0
        };
        rates.push(term);
        acc += term;
        if term <= K_TRUNCATION * acc && term <= 0.99 * prev {
            return Ok(rates);
        }
        prev = term;
    }
    Err(DualError::RateDivergence { level: n })
}

/// `Σ_k k · rate(n -> n+k)`, the mean upward speed of `K_t` at `n`.
pub fn k_mean_up_jump(measure: &LambdaMeasure, n: u64, variant: KVariant) -> Result<f64, DualError> {
    Ok(k_up_rates(measure, n, variant)?
        .iter()
        .enumerate()
        .map(|(i, r)| (i + 1) as f64 * r)
        .sum())
}

/// Gillespie simulation of `K_t`: up-jumps from [`k_up_rates`], down-jumps
/// `n -> n-1` at rate `α(n-1)`.
pub fn simulate_k<R: Rng + ?Sized>(
    measure: &LambdaMeasure,
    alpha: f64,
    n0: u64,
    t_end: f64,
    grid: &[f64],
    variant: KVariant,
    rng: &mut R,
) -> Result<Path, DualError> {
    if n0 < 1 {
        return Err(DualError::Config("K starts at level 1 or above".into()));
    }
    if !(alpha.is_finite() && alpha >= 0.0) {
        return Err(DualError::Config(format!("alpha must be finite and nonnegative, got {alpha}")));
    }
    validate_grid(grid).map_err(DualError::Config)?;
    let mut cache: HashMap<u64, Vec<f64>> = HashMap::new();
    let mut path = Path::default();
    let mut grid = grid.iter().copied().filter(|&g| g <= t_end).peekable();
    let mut state = DualState { k: n0, clock: 0.0 };
    loop {
        if let Entry::Vacant(slot) = cache.entry(state.k) {
            let mut acc = 0.0;
            let cumulative = k_up_rates(measure, state.k, variant)?
                .into_iter()
                .map(|r| {
                    acc += r;
                    acc
                })
                .collect();
            slot.insert(cumulative);
        }
        let row = &cache[&state.k];
        let up = row.last().copied().unwrap_or(0.0);
        let down = alpha * (state.k - 1) as f64;
        let total = up + down;
        let next = if total > 0.0 {
            state.clock - (1.0 - rng.random::<f64>()).ln() / total
        } else {
            f64::INFINITY
        };
        while let Some(&g) = grid.peek() {
            if g < next {
                path.push(g, state.k as f64);
                grid.next();
            } else {
                break;
            }
        }
        if next > t_end {
            break;
        }
        state.clock = next;
        let u = rng.random::<f64>() * total;
        if u < up {
            let idx = row.iter().position(|&c| u < c).unwrap_or(row.len() - 1);
            state.k += idx as u64 + 1;
        } else {
            state.k -= 1;
        }
    }
    Ok(path)
}

/// One cell of a duality comparison.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DualityCell {
    pub alpha: f64,
    pub x: f64,
    pub n: u64,
    pub t: f64,
    /// Monte Carlo `E[X_t^n]` from the SDE.
    pub lhs: f64,
    /// Monte Carlo `E[x^{R_t}]` from the dual chain.
    pub rhs: f64,
    pub gap: f64,
    /// Pooled standard error of `gap`.
    pub se: f64,
    pub lhs_se: f64,
    pub rhs_se: f64,
    /// `|gap| <= DUALITY_SIGMAS * se`.
    pub pass: bool,
}

/// Tolerance of a duality cell in pooled standard errors.
pub const DUALITY_SIGMAS: f64 = 3.0;

/// Grid of duality comparisons.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualitySpec {
    pub alphas: Vec<f64>,
    pub xs: Vec<f64>,
    pub ns: Vec<u64>,
    pub ts: Vec<f64>,
    pub replicas: u64,
    pub seed: u64,
    #[serde(default)]
    pub sde: SdeConfig,
}

const SDE_PURPOSE: u64 = 1 << 32;
const DUAL_PURPOSE: u64 = 2 << 32;

/// Runs every cell of `spec`. Each `(α, x)` pair uses one batch of SDE paths
/// for all `n` and `t`; each `(α, n)` pair uses one batch of dual paths for
/// all `x` and `t`. The two sides use disjoint random streams.
pub fn duality_grid(measure: &LambdaMeasure, spec: &DualitySpec, threads: Option<usize>) -> Result<Vec<DualityCell>, DualError> {
    if spec.replicas < 2 {
        return Err(DualError::Config("duality needs at least two replicas per side".into()));
    }
    if spec.ns.iter().any(|&n| n < 1) || spec.xs.iter().any(|x| !(0.0..=1.0).contains(x)) {
        return Err(DualError::Config("need n >= 1 and x in [0, 1]".into()));
    }
    let mut ts = spec.ts.clone();
    ts.sort_by(f64::total_cmp);
    ts.dedup();
    validate_grid(&ts).map_err(DualError::Config)?;
    let t_end = *ts.last().ok_or_else(|| DualError::Config("no times given".into()))?;
    let n_max = spec.ns.iter().copied().max().unwrap_or(1);

    let mut cells = Vec::new();
    for (ai, &alpha) in spec.alphas.iter().enumerate() {
        let sde = SdeEngine::new(measure, alpha, spec.sde)?;
        let dual = DualEngine::new(measure, alpha, DEFAULT_TABLE_SIZE.max(n_max))?;

        // X at each time, per x.
        let mut forward: Vec<Vec<Vec<f64>>> = Vec::new();
        for (xi, &x) in spec.xs.iter().enumerate() {
            let purpose = SDE_PURPOSE | ((ai as u64) << 16) | xi as u64;
            let runs = map_replicas(spec.replicas, threads, |r| {
                let mut rng = purpose_stream(spec.seed, r, purpose);
                sde.run(x, t_end, &ts, &mut rng).map(|run| run.path)
            });
            let paths = runs.into_iter().collect::<Result<Vec<_>, _>>()?;
            forward.push(paths_to_columns(&paths, &ts));
        }
        // R at each time, per n.
        let mut backward: Vec<Vec<Vec<f64>>> = Vec::new();
        for (ni, &n) in spec.ns.iter().enumerate() {
            let purpose = DUAL_PURPOSE | ((ai as u64) << 16) | ni as u64;
            let runs = map_replicas(spec.replicas, threads, |r| {
                let mut rng = purpose_stream(spec.seed, r, purpose);
                dual.simulate(n, t_end, &ts, &mut rng)
            });
            let paths = runs.into_iter().collect::<Result<Vec<_>, _>>()?;
            backward.push(paths_to_columns(&paths, &ts));
        }

        for (xi, &x) in spec.xs.iter().enumerate() {
            for (ni, &n) in spec.ns.iter().enumerate() {
                for (ti, &t) in ts.iter().enumerate() {
                    let lhs_values: Vec<f64> = forward[xi][ti].iter().map(|v| v.powi(n as i32)).collect();
                    let rhs_values: Vec<f64> = backward[ni][ti].iter().map(|&k| x.powi(k as i32)).collect();
                    let l = SummaryStats::from_values(&lhs_values);
                    let r = SummaryStats::from_values(&rhs_values);
                    let gap = l.mean - r.mean;
                    let se = (l.se * l.se + r.se * r.se).sqrt();
                    cells.push(DualityCell {
                        alpha,
                        x,
                        n,
                        t,
                        lhs: l.mean,
                        rhs: r.mean,
                        gap,
                        se,
                        lhs_se: l.se,
                        rhs_se: r.se,
                        pass: gap.abs() <= DUALITY_SIGMAS * se,
                    });
                }
            }
        }
    }
    Ok(cells)
}

/// Transposes per-replica paths into per-time columns.
fn paths_to_columns(paths: &[Path], ts: &[f64]) -> Vec<Vec<f64>> {
    (0..ts.len())
        .map(|i| paths.iter().map(|p| p.points[i].1).collect())
        .collect()
}

/// A single duality comparison.
#[allow(clippy::too_many_arguments)]
pub fn duality_gap(
    measure: &LambdaMeasure,
    alpha: f64,
    x: f64,
    n: u64,
    t: f64,
    replicas: u64,
    seed: u64,
    sde: SdeConfig,
    threads: Option<usize>,
) -> Result<DualityCell, DualError> {
    let spec = DualitySpec {
        alphas: vec![alpha],
        xs: vec![x],
        ns: vec![n],
        ts: vec![t],
        replicas,
        seed,
        sde,
    };
    Ok(duality_grid(measure, &spec, threads)?[0])
}
