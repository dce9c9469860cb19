//! Hybrid integrator for the Λ-Wright-Fisher jump SDE with selection.
//!
//! Jumps of size at least `ε` are simulated exactly from a Poisson clock.
//! Between jumps the selection drift `-αX(1-X)` is solved in closed form and,
//! when the Brownian coefficient is nonzero, Gaussian steps of size at most
//! `dt` are taken.
//!
//! The state is kept as the log-odds `z = ln(X / (1 - X))`. The drift is then
//! `dz = -α dt`, both jump maps have cancellation-free forms, and values of
//! `X` very close to 0 or 1 stay distinguishable from the boundary.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{MeasureError, SdeError};
use crate::lookdown::Fixation;
use crate::measure::{LambdaMeasure, TruncatedSampler};
use crate::path::{validate_grid, Path};

/// Treatment of jumps smaller than `ε`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SmallJumpMode {
    Drop,
    /// Replace them by a Brownian term of the same variance rate.
    #[default]
    DiffusionSubstitute,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SdeConfig {
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default)]
    pub small_jump_mode: SmallJumpMode,
    /// Distance to the boundary at which a path counts as fixed and is
    /// absorbed. Zero means only exact boundary hits count.
    #[serde(default = "default_fix_delta")]
    pub fix_delta: f64,
}

fn default_epsilon() -> f64 {
    1e-3
}

fn default_dt() -> f64 {
    1e-3
}

fn default_fix_delta() -> f64 {
    1e-6
}

impl Default for SdeConfig {
    fn default() -> Self {
        Self {
            epsilon: default_epsilon(),
            dt: default_dt(),
            small_jump_mode: SmallJumpMode::default(),
            fix_delta: default_fix_delta(),
        }
    }
}

impl SdeConfig {
    pub fn validate(&self) -> Result<(), SdeError> {
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(SdeError::Config(format!("epsilon must lie in (0, 1), got {}", self.epsilon)));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(SdeError::Config(format!("dt must be positive, got {}", self.dt)));
        }
        if !(0.0..0.5).contains(&self.fix_delta) {
            return Err(SdeError::Config(format!("fix_delta must lie in [0, 0.5), got {}", self.fix_delta)));
        }
        Ok(())
    }
}

/// `x + p (1{u <= x} - x)`.
pub fn jump_map(x: f64, p: f64, u: f64) -> f64 {
    if u <= x {
        x + p * (1.0 - x)
    } else {
        x - p * x
    }
}

/// `Λ((0, ε))`, the variance rate of the jumps below `ε`.
pub fn small_jump_variance(measure: &LambdaMeasure, eps: f64) -> f64 {
    measure.small_jump_variance(eps)
}

fn logit(x: f64) -> f64 {
    x.ln() - (-x).ln_1p()
}

/// `(X, 1 - X)` from the log-odds, each computed without cancellation.
fn from_logit(z: f64) -> (f64, f64) {
    if z == f64::INFINITY {
        return (1.0, 0.0);
    }
    if z == f64::NEG_INFINITY {
        return (0.0, 1.0);
    }
    let x = 1.0 / (1.0 + (-z).exp());
    let y = 1.0 / (1.0 + z.exp());
    (x, y)
}

fn logaddexp(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Output of one SDE path.
#[derive(Debug, Clone)]
pub struct SdeRun {
    /// `X` at the grid times that do not exceed the horizon.
    pub path: Path,
    /// `X` at the end of the run.
    pub x: f64,
    /// `ln(X / (1 - X))` at the end of the run. Finite exactly when the path
    /// is strictly inside `(0, 1)`, even where `x` rounds to 0 or 1.
    pub log_odds: f64,
    pub fixation: Option<Fixation>,
    pub jumps: u64,
}

/// A configured integrator; cheap to share between replicas.
#[derive(Debug, Clone)]
pub struct SdeEngine {
    alpha: f64,
    cfg: SdeConfig,
    sigma2: f64,
    sampler: Option<TruncatedSampler>,
    fix_z: f64,
}

impl SdeEngine {
    pub fn new(measure: &LambdaMeasure, alpha: f64, cfg: SdeConfig) -> Result<Self, SdeError> {
        cfg.validate()?;
        if !(alpha.is_finite() && alpha >= 0.0) {
            return Err(SdeError::Config(format!("alpha must be finite and nonnegative, got {alpha}")));
        }
        let sampler = if measure.components().is_empty() {
            None
        } else {
            match TruncatedSampler::new(measure, cfg.epsilon) {
                Ok(s) => Some(s),
                Err(MeasureError::EmptySupport(_)) => None,
                Err(e) => return Err(e.into()),
            }
        };
        let sigma2 = match cfg.small_jump_mode {
            SmallJumpMode::Drop => measure.atom0(),
            SmallJumpMode::DiffusionSubstitute => measure.atom0() + measure.small_jump_variance(cfg.epsilon),
        };
        let fix_z = if cfg.fix_delta > 0.0 { -logit(cfg.fix_delta) } else { f64::INFINITY };
        Ok(Self {
            alpha,
            cfg,
            sigma2,
            sampler,
            fix_z,
        })
    }

    pub fn config(&self) -> &SdeConfig {
        &self.cfg
    }

    /// Coefficient `σ²` of the Brownian term `σ² X(1-X) dt`.
    pub fn diffusion_coefficient(&self) -> f64 {
        self.sigma2
    }

    /// Rate `ν([ε, 1])` of the simulated jumps.
    pub fn jump_rate(&self) -> f64 {
        self.sampler.as_ref().map_or(0.0, |s| s.rate())
    }

    /// Integrates from `x0` up to `t_end`, recording `X` at `grid` times.
    /// After fixation the path is constant, so later grid points repeat the
    /// boundary value without further simulation.
    pub fn run<R: Rng + ?Sized>(
        &self,
        x0: f64,
        t_end: f64,
        grid: &[f64],
        rng: &mut R,
    ) -> Result<SdeRun, SdeError> {
        if !(0.0..=1.0).contains(&x0) {
            return Err(SdeError::Config(format!("x0 must lie in [0, 1], got {x0}")));
        }
        if !(t_end.is_finite() && t_end >= 0.0) {
            return Err(SdeError::Config(format!("horizon must be finite and nonnegative, got {t_end}")));
        }
        validate_grid(grid).map_err(SdeError::Config)?;

        let grid: Vec<f64> = grid.iter().copied().filter(|&g| g <= t_end).collect();
        let mut path = Path::default();
        let mut next_grid = 0;
        let mut t = 0.0;
        let mut z = self.absorb(logit(x0));
        let mut fixation = None;
        let mut jumps = 0;
        let rate = self.jump_rate();
        let mut next_jump = if rate > 0.0 { exp_draw(rng, rate) } else { f64::INFINITY };

        loop {
            if fixation.is_none() && z.is_infinite() {
                fixation = Some(Fixation {
                    time: t,
                    value: u8::from(z > 0.0),
                });
            }
            while next_grid < grid.len() && grid[next_grid] <= t {
                path.push(grid[next_grid], from_logit(z).0);
                next_grid += 1;
            }
            if t >= t_end {
                break;
            }
            if z.is_infinite() {
                t = t_end;
                continue;
            }
            let mut target = next_jump.min(t_end);
            if next_grid < grid.len() {
                target = target.min(grid[next_grid]);
            }
            if self.sigma2 > 0.0 {
                target = target.min(t + self.cfg.dt);
            }
            let h = target - t;
            z -= self.alpha * h;
            if self.sigma2 > 0.0 && h > 0.0 {
                z = self.gaussian_step(z, h, rng);
            }
            t = target;
            if t == next_jump && z.is_finite() {
                let (p, q) = self.sampler.as_ref().expect("jump clock implies sampler").sample(rng);
                let u = 1.0 - rng.random::<f64>();
                z = jump_logit(z, p, q, u);
                jumps += 1;
                next_jump = t + exp_draw(rng, rate);
            }
            z = self.absorb(z);
        }
        Ok(SdeRun {
            path,
            x: from_logit(z).0,
            log_odds: z,
            fixation,
            jumps,
        })
    }

    fn absorb(&self, z: f64) -> f64 {
        if z >= self.fix_z {
            f64::INFINITY
        } else if z <= -self.fix_z {
            f64::NEG_INFINITY
        } else {
            z
        }
    }

    /// Euler step of `σ √(X(1-X)) dB` over time `h`, clamped to `[0, 1]`.
    fn gaussian_step<R: Rng + ?Sized>(&self, z: f64, h: f64, rng: &mut R) -> f64 {
        let (x, y) = from_logit(z);
        let xi: f64 = rng.sample(StandardNormal);
        let dx = (self.sigma2 * x * y * h).sqrt() * xi;
        let x1 = x + dx;
        let y1 = y - dx;
        if x1 <= 0.0 {
            f64::NEG_INFINITY
        } else if y1 <= 0.0 {
            f64::INFINITY
        } else {
            x1.ln() - y1.ln()
        }
    }
}

/// [`jump_map`] in log-odds.
fn jump_logit(z: f64, p: f64, q: f64, u: f64) -> f64 {
    let (x, _) = from_logit(z);
    if u <= x {
        // X' = X + p(1-X): odds (e^z + p) / q.
        logaddexp(z, p.ln()) - q.ln()
    } else {
        // X' = qX: odds q / (e^{-z} + p).
        q.ln() - logaddexp(-z, p.ln())
    }
}

fn exp_draw<R: Rng + ?Sized>(rng: &mut R, rate: f64) -> f64 {
    -(1.0 - rng.random::<f64>()).ln() / rate
}

/// Single path of `X` on `grid`, without stopping at fixation.
pub fn integrate<R: Rng + ?Sized>(
    measure: &LambdaMeasure,
    alpha: f64,
    x0: f64,
    t_end: f64,
    cfg: SdeConfig,
    rng: &mut R,
    grid: &[f64],
) -> Result<Path, SdeError> {
    let engine = SdeEngine::new(measure, alpha, cfg)?;
    Ok(engine.run(x0, t_end, grid, rng)?.path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;
    use crate::stats::SummaryStats;

    #[test]
    fn jump_examples() {
        assert!((jump_map(0.5, 0.2, 0.3) - 0.6).abs() < 1e-15);
        assert!((jump_map(0.5, 0.2, 0.9) - 0.4).abs() < 1e-15);
        for &(x, p, u) in &[(0.5, 0.2, 0.3), (0.5, 0.2, 0.9), (1e-9, 0.7, 0.5), (0.999, 0.01, 0.1)] {
            let z = jump_logit(logit(x), p, 1.0 - p, u);
            let expect = jump_map(x, p, u);
            assert!((from_logit(z).0 - expect).abs() < 1e-14 * expect.max(1e-300) + 1e-15);
        }
    }

    #[test]
    fn small_jump_variance_examples() {
        assert!((small_jump_variance(&LambdaMeasure::uniform(1.0), 0.1) - 0.1).abs() < 1e-12);
        assert_eq!(small_jump_variance(&LambdaMeasure::point_mass(0.5, 2.0), 0.1), 0.0);
        let b = LambdaMeasure::beta(2.0, 3.0, 1.5);
        assert!((small_jump_variance(&b, 1.0 - 1e-12) - 1.5).abs() < 1e-9);
    }

    #[test]
    fn boundaries_absorb() {
        let m = LambdaMeasure::uniform(1.0);
        let grid = [0.0, 0.5, 1.0];
        let mut rng = substream(1, 0);
        let p = integrate(&m, 0.7, 0.0, 1.0, SdeConfig::default(), &mut rng, &grid).unwrap();
        assert!(p.points.iter().all(|&(_, v)| v == 0.0));
        let p = integrate(&m, 0.0, 1.0, 1.0, SdeConfig::default(), &mut rng, &grid).unwrap();
        assert!(p.points.iter().all(|&(_, v)| v == 1.0));
    }

    #[test]
    fn drift_is_exact_without_noise() {
        // Point mass far from the origin and no jumps: pure logistic decay.
        let engine = SdeEngine::new(&LambdaMeasure::point_mass(0.5, 1e-300), 1.0, SdeConfig::default()).unwrap();
        let mut rng = substream(3, 0);
        let run = engine.run(0.5, 2.0, &[2.0], &mut rng).unwrap();
        let expect = 1.0 / (1.0 + 2f64.exp());
        assert!((run.x - expect).abs() < 1e-14);
    }

    #[test]
    fn neutral_point_mass_is_a_martingale() {
        let m = LambdaMeasure::point_mass(0.3, 2.0);
        let engine = SdeEngine::new(&m, 0.0, SdeConfig::default()).unwrap();
        let xs: Vec<f64> = (0..10_000)
            .map(|i| engine.run(0.4, 1.0, &[1.0], &mut substream(11, i)).unwrap().x)
            .collect();
        let s = SummaryStats::from_values(&xs);
        assert!((s.mean - 0.4).abs() <= 3.0 * s.se, "{s:?}");
    }

    #[test]
    fn fixation_short_circuit() {
        let m = LambdaMeasure::kingman(1.0);
        let engine = SdeEngine::new(&m, 1.0, SdeConfig::default()).unwrap();
        let run = engine.run(0.5, 50.0, &[0.0, 50.0], &mut substream(5, 0)).unwrap();
        let f = run.fixation.expect("fixes well before T = 50");
        assert!(f.time < 50.0);
        assert_eq!(run.x, f64::from(f.value));
        assert_eq!(run.path.points.len(), 2);
        assert_eq!(run.path.last(), Some(run.x));
    }

    #[test]
    fn config_errors() {
        let m = LambdaMeasure::uniform(1.0);
        let bad = SdeConfig { epsilon: 1.0, ..Default::default() };
        assert!(matches!(SdeEngine::new(&m, 0.0, bad), Err(SdeError::Config(_))));
        let bad = SdeConfig { dt: 0.0, ..Default::default() };
        assert!(matches!(SdeEngine::new(&m, 0.0, bad), Err(SdeError::Config(_))));
        let e = SdeEngine::new(&m, 0.0, SdeConfig::default()).unwrap();
        assert!(e.run(1.5, 1.0, &[], &mut substream(0, 0)).is_err());
    }
}
