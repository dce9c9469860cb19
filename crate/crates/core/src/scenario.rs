//! Scenario files: one JSON document describing a model, a run and the
//! experiment-specific settings.

use std::path::Path as FsPath;

use serde::{Deserialize, Serialize};

use crate::dual::KVariant;
use crate::error::HarnessError;
use crate::lookdown::{BirthScheme, LookdownConfig, Refill};
use crate::measure::LambdaMeasure;
use crate::sde::SdeConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Engine {
    Lookdown,
    #[default]
    Sde,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LookdownOptions {
    #[serde(default)]
    pub refill: Refill,
    #[serde(default)]
    pub scheme: BirthScheme,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RatesBlock {
    #[serde(default = "default_rates_n_max")]
    pub n_max: u64,
    /// Largest block count used by the coming-down classification.
    #[serde(default = "default_cdi_n_max")]
    pub cdi_n_max: u64,
    /// Allow the Beta-family shortcut in the classification.
    #[serde(default = "default_true")]
    pub analytic_hints: bool,
}

fn default_rates_n_max() -> u64 {
    10
}

fn default_cdi_n_max() -> u64 {
    1 << 16
}

fn default_true() -> bool {
    true
}

/// Calibrated thresholds for the fixation experiment. Any subset may be set;
/// the verdict requires all that are set.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixationBlock {
    pub min_fixation_fraction: Option<f64>,
    pub min_interior_fraction: Option<f64>,
    /// Require the fraction fixed at 0 to be at least `1 - x0 - 3 se`.
    #[serde(default)]
    pub check_zero_lower_bound: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExtinctionBlock {
    /// Observation times, increasing; the first and last are compared.
    pub times: Vec<f64>,
    /// `X_T > 1 - delta` counts as near fixation at 1.
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default = "default_tail")]
    pub max_tail_fraction: f64,
}

fn default_delta() -> f64 {
    0.01
}

fn default_tail() -> f64 {
    0.01
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvergenceBlock {
    pub n_list: Vec<usize>,
    /// Replicas of the SDE reference; defaults to the scenario's count.
    pub sde_replicas: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExchangeabilityBlock {
    #[serde(default = "default_k_levels")]
    pub k_levels: usize,
    #[serde(default = "default_blocks")]
    pub blocks: u64,
    #[serde(default = "default_level")]
    pub level: f64,
}

impl Default for ExchangeabilityBlock {
    fn default() -> Self {
        Self {
            k_levels: default_k_levels(),
            blocks: default_blocks(),
            level: default_level(),
        }
    }
}

fn default_k_levels() -> usize {
    4
}

fn default_blocks() -> u64 {
    3
}

fn default_level() -> f64 {
    0.01
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DualityBlock {
    pub alphas: Vec<f64>,
    pub xs: Vec<f64>,
    pub ns: Vec<u64>,
    pub ts: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DualProcess {
    /// Block counting process `R_t`.
    #[default]
    R,
    /// Level of the first `B` individual, `K_t`.
    K,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DualBlock {
    #[serde(default)]
    pub process: DualProcess,
    pub n0: u64,
    #[serde(default)]
    pub variant: KVariant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub lambda: LambdaMeasure,
    #[serde(default)]
    pub alpha: f64,
    #[serde(default = "default_x0")]
    pub x0: f64,
    /// Window size `N` of the lookdown engine.
    #[serde(default = "default_n", alias = "N")]
    pub n: usize,
    /// Levels above the window; defaults to `n`.
    #[serde(default)]
    pub buffer: Option<usize>,
    /// Horizon `T`.
    #[serde(default = "default_t", alias = "T")]
    pub t_end: f64,
    /// Recording times; defaults to `[0, T]`.
    #[serde(default)]
    pub t_grid: Option<Vec<f64>>,
    #[serde(default)]
    pub sde: SdeConfig,
    #[serde(default)]
    pub lookdown: LookdownOptions,
    pub seed: Option<u64>,
    #[serde(default = "default_replicas")]
    pub replicas: u64,
    #[serde(default)]
    pub engine: Engine,
    #[serde(default)]
    pub rates: Option<RatesBlock>,
    #[serde(default)]
    pub fixation: Option<FixationBlock>,
    #[serde(default)]
    pub extinction: Option<ExtinctionBlock>,
    #[serde(default)]
    pub convergence: Option<ConvergenceBlock>,
    #[serde(default)]
    pub exchangeability: Option<ExchangeabilityBlock>,
    #[serde(default)]
    pub duality: Option<DualityBlock>,
    #[serde(default)]
    pub dual: Option<DualBlock>,
}

fn default_x0() -> f64 {
    0.5
}

fn default_n() -> usize {
    100
}

fn default_t() -> f64 {
    1.0
}

fn default_replicas() -> u64 {
    1000
}

fn bad(key: &str, msg: impl std::fmt::Display) -> HarnessError {
    HarnessError::Scenario(format!("`{key}`: {msg}"))
}

impl ScenarioConfig {
    /// A scenario with defaults everywhere except the measure.
    pub fn new(lambda: LambdaMeasure) -> Self {
        serde_json::from_value(serde_json::json!({ "lambda": lambda })).expect("defaults are valid")
    }

    /// Parses and validates a scenario. Parse errors carry line and column.
    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| HarnessError::Scenario(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &FsPath) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Scenario(format!("{}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| match e {
            HarnessError::Scenario(m) => HarnessError::Scenario(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return Err(bad("alpha", format!("must be finite and nonnegative, got {}", self.alpha)));
        }
        if !(0.0..=1.0).contains(&self.x0) {
            return Err(bad("x0", format!("must lie in [0, 1], got {}", self.x0)));
        }
        if self.n < 2 {
            return Err(bad("n", format!("must be at least 2, got {}", self.n)));
        }
        if !(self.t_end.is_finite() && self.t_end >= 0.0) {
            return Err(bad("t_end", format!("must be finite and nonnegative, got {}", self.t_end)));
        }
        if let Some(grid) = &self.t_grid {
            crate::path::validate_grid(grid).map_err(|m| bad("t_grid", m))?;
        }
        self.sde.validate().map_err(|e| bad("sde", e))?;
        if self.replicas < 1 {
            return Err(bad("replicas", "must be at least 1"));
        }
        if let Some(b) = &self.rates {
            if b.n_max < 2 || b.cdi_n_max < 4 {
                return Err(bad("rates", "n_max must be at least 2 and cdi_n_max at least 4"));
            }
        }
        if let Some(b) = &self.fixation {
            for (k, v) in [("min_fixation_fraction", b.min_fixation_fraction), ("min_interior_fraction", b.min_interior_fraction)] {
                if let Some(v) = v {
                    if !(0.0..=1.0).contains(&v) {
                        return Err(bad(&format!("fixation.{k}"), format!("must lie in [0, 1], got {v}")));
                    }
                }
            }
        }
        if let Some(b) = &self.extinction {
            if b.times.len() < 2 {
                return Err(bad("extinction.times", "needs at least two times"));
            }
            crate::path::validate_grid(&b.times).map_err(|m| bad("extinction.times", m))?;
            if !(b.delta > 0.0 && b.delta < 1.0) {
                return Err(bad("extinction.delta", format!("must lie in (0, 1), got {}", b.delta)));
            }
        }
        if let Some(b) = &self.convergence {
            if b.n_list.is_empty() || b.n_list.windows(2).any(|w| w[1] <= w[0]) || b.n_list[0] < 2 {
                return Err(bad("convergence.n_list", "must be nonempty, increasing and start at 2 or above"));
            }
        }
        if let Some(b) = &self.exchangeability {
            if !(1..=16).contains(&b.k_levels) || b.k_levels > self.n + self.buffer.unwrap_or(self.n) {
                return Err(bad("exchangeability.k_levels", format!("must lie in 1..=16, got {}", b.k_levels)));
            }
            if b.blocks < 1 {
                return Err(bad("exchangeability.blocks", "must be at least 1"));
            }
            if !(b.level > 0.0 && b.level < 1.0) {
                return Err(bad("exchangeability.level", format!("must lie in (0, 1), got {}", b.level)));
            }
        }
        if let Some(b) = &self.duality {
            if b.alphas.iter().any(|a| !(a.is_finite() && *a >= 0.0)) {
                return Err(bad("duality.alphas", "must be finite and nonnegative"));
            }
            if b.xs.iter().any(|x| !(0.0..=1.0).contains(x)) {
                return Err(bad("duality.xs", "must lie in [0, 1]"));
            }
            if b.ns.iter().any(|&n| n < 1) {
                return Err(bad("duality.ns", "must be at least 1"));
            }
            if b.ts.is_empty() || b.ts.iter().any(|t| !(t.is_finite() && *t >= 0.0)) {
                return Err(bad("duality.ts", "must be nonempty, finite and nonnegative"));
            }
        }
        if let Some(b) = &self.dual {
            if b.n0 < 1 {
                return Err(bad("dual.n0", "must be at least 1"));
            }
        }
        Ok(())
    }

    /// The recording grid, `[0, T]` unless given.
    pub fn grid(&self) -> Vec<f64> {
        self.t_grid.clone().unwrap_or_else(|| {
            if self.t_end > 0.0 {
                vec![0.0, self.t_end]
            } else {
                vec![0.0]
            }
        })
    }

    /// Lookdown settings with window `n`.
    pub fn lookdown_config(&self, n: usize) -> LookdownConfig {
        LookdownConfig {
            n,
            buffer: if n == self.n { self.buffer.unwrap_or(n) } else { n },
            alpha: self.alpha,
            x0: self.x0,
            refill: self.lookdown.refill,
            scheme: self.lookdown.scheme,
        }
    }

    /// The master seed, with `override_seed` taking precedence.
    pub fn resolve_seed(&self, override_seed: Option<u64>) -> Result<u64, HarnessError> {
        override_seed
            .or(self.seed)
            .ok_or_else(|| bad("seed", "no seed given in the scenario or on the command line"))
    }
}
