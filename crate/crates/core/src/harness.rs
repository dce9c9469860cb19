//! Monte Carlo experiments over many replicas.
//!
//! Replica `i` of a run with master seed `s` draws only from streams keyed by
//! `(s, i)`, and results are gathered in replica order, so every statistic is
//! a pure function of the scenario and the seed.

use std::collections::BTreeMap;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, RatesError};
use crate::lookdown::{Fixation, LookdownEngine};
use crate::parallel::map_replicas;
use crate::path::{write_csv, Path};
use crate::rates::mu_threshold;
use crate::rng::{purpose_stream, substream};
use crate::scenario::{Engine, ExchangeabilityBlock, ScenarioConfig};
use crate::sde::SdeEngine;
use crate::stats::{chi_square_p_value, SummaryStats};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    Pass,
    Fail,
    Inconclusive,
}

impl Verdict {
    fn from_checks(checks: &[bool]) -> Self {
        if checks.is_empty() {
            Verdict::Inconclusive
        } else if checks.iter().all(|&c| c) {
            Verdict::Pass
        } else {
            Verdict::Fail
        }
    }
}

/// Outcome of an experiment, with everything needed to recompute its verdict.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub name: String,
    pub config: ScenarioConfig,
    pub metrics: BTreeMap<String, SummaryStats>,
    pub values: BTreeMap<String, f64>,
    pub tolerances: BTreeMap<String, f64>,
    pub verdict: Verdict,
    pub seeds: Vec<u64>,
    pub notes: Vec<String>,
}

impl ExperimentResult {
    fn new(name: &str, config: &ScenarioConfig, seed: u64) -> Self {
        Self {
            name: name.into(),
            config: config.clone(),
            metrics: BTreeMap::new(),
            values: BTreeMap::new(),
            tolerances: BTreeMap::new(),
            verdict: Verdict::Inconclusive,
            seeds: vec![seed],
            notes: Vec::new(),
        }
    }

    fn metric(&mut self, key: impl Into<String>, values: &[f64]) -> SummaryStats {
        let s = SummaryStats::from_values(values);
        if !values.is_empty() {
            self.metrics.insert(key.into(), s);
        }
        s
    }

    fn value(&mut self, key: impl Into<String>, v: f64) {
        if v.is_finite() {
            self.values.insert(key.into(), v);
        }
    }
}

/// Runs `f` for every replica index in `range` and returns the results in
/// index order. The first failure is reported with its replica index.
pub fn run_replicas<T, E, F>(range: Range<u64>, threads: Option<usize>, f: F) -> Result<Vec<T>, HarnessError>
where
    T: Send,
    E: std::fmt::Display + Send,
    F: Fn(u64) -> Result<T, E> + Sync + Send,
{
    let start = range.start;
    let count = range.end.saturating_sub(range.start);
    let results = map_replicas(count, threads, |i| f(start + i));
    results
        .into_iter()
        .enumerate()
        .map(|(i, r)| {
            r.map_err(|e| HarnessError::Replica {
                index: start + i as u64,
                message: e.to_string(),
            })
        })
        .collect()
}

/// One simulated trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub path: Path,
    pub fixation: Option<Fixation>,
    pub final_value: f64,
    /// Strictly between 0 and 1 at the end of the run.
    pub interior: bool,
}

const SDE_REFERENCE: u64 = 1;

/// Simulates the scenario's engine for the replicas in `range`, with window
/// `n` for the lookdown engine.
pub fn simulate_outcomes(
    cfg: &ScenarioConfig,
    engine: Engine,
    n: usize,
    seed: u64,
    range: Range<u64>,
    grid: &[f64],
    threads: Option<usize>,
) -> Result<Vec<Outcome>, HarnessError> {
    let t_end = cfg.t_end.max(grid.last().copied().unwrap_or(0.0));
    match engine {
        Engine::Lookdown => {
            let eng = LookdownEngine::new(&cfg.lambda, cfg.lookdown_config(n))?;
            run_replicas(range, threads, |r| {
                let run = eng.run(seed, r, t_end, grid, true);
                let x = run.state.proportion();
                Ok::<_, HarnessError>(Outcome {
                    final_value: x,
                    interior: x > 0.0 && x < 1.0,
                    path: run.path,
                    fixation: run.fixation,
                })
            })
        }
        Engine::Sde => {
            let eng = SdeEngine::new(&cfg.lambda, cfg.alpha, cfg.sde)?;
            run_replicas(range, threads, |r| {
                let run = eng.run(cfg.x0, t_end, grid, &mut substream(seed, r))?;
                Ok::<_, HarnessError>(Outcome {
                    path: run.path,
                    fixation: run.fixation,
                    final_value: run.x,
                    interior: run.log_odds.is_finite(),
                })
            })
        }
    }
}

/// Per-replica paths of the scenario's engine as `replica,t,value` CSV.
pub fn paths_csv(cfg: &ScenarioConfig, seed: u64, threads: Option<usize>) -> Result<String, HarnessError> {
    let grid = cfg.grid();
    let outcomes = simulate_outcomes(cfg, cfg.engine, cfg.n, seed, 0..cfg.replicas, &grid, threads)?;
    let paths: Vec<Path> = outcomes.into_iter().map(|o| o.path).collect();
    let mut out = Vec::new();
    write_csv(&mut out, &paths, 0).expect("writing to memory");
    Ok(String::from_utf8(out).expect("ascii output"))
}

fn quantile(sorted: &[f64], p: f64) -> f64 {
    sorted[((sorted.len() - 1) as f64 * p).round() as usize]
}

/// Standard errors used by the Monte Carlo verdicts.
pub const SIGMAS: f64 = 3.0;

/// Fixation within the horizon: fraction fixed, split by value, fixation
/// time quantiles, and fraction still interior at `T`.
pub fn fixation_experiment(cfg: &ScenarioConfig, seed: u64, threads: Option<usize>) -> Result<ExperimentResult, HarnessError> {
    let outcomes = simulate_outcomes(cfg, cfg.engine, cfg.n, seed, 0..cfg.replicas, &[cfg.t_end], threads)?;
    let mut res = ExperimentResult::new("fixation", cfg, seed);
    let ind = |f: &dyn Fn(&Outcome) -> bool| -> Vec<f64> { outcomes.iter().map(|o| f64::from(u8::from(f(o)))).collect() };
    let fixed = res.metric("fixation_fraction", &ind(&|o| o.fixation.is_some()));
    let at_zero = res.metric("fixed_at_zero", &ind(&|o| matches!(o.fixation, Some(Fixation { value: 0, .. }))));
    res.metric("fixed_at_one", &ind(&|o| matches!(o.fixation, Some(Fixation { value: 1, .. }))));
    let interior = res.metric("interior_fraction", &ind(&|o| o.interior));
    let mut times: Vec<f64> = outcomes.iter().filter_map(|o| o.fixation.map(|f| f.time)).collect();
    times.sort_by(f64::total_cmp);
    if !times.is_empty() {
        for (k, p) in [("fixation_time_q10", 0.1), ("fixation_time_q50", 0.5), ("fixation_time_q90", 0.9)] {
            res.value(k, quantile(&times, p));
        }
    }
    let mut checks = Vec::new();
    if let Some(b) = &cfg.fixation {
        if let Some(min) = b.min_fixation_fraction {
            res.tolerances.insert("min_fixation_fraction".into(), min);
            checks.push(fixed.mean >= min);
        }
        if let Some(min) = b.min_interior_fraction {
            res.tolerances.insert("min_interior_fraction".into(), min);
            checks.push(interior.mean >= min);
        }
        if b.check_zero_lower_bound {
            let bound = 1.0 - cfg.x0 - SIGMAS * at_zero.se;
            res.value("zero_lower_bound", bound);
            res.tolerances.insert("sigmas".into(), SIGMAS);
            checks.push(at_zero.mean >= bound);
        }
    }
    if checks.is_empty() {
        res.notes.push("no thresholds declared in the fixation block".into());
    }
    res.verdict = Verdict::from_checks(&checks);
    Ok(res)
}

/// `E[X_T]` against `x0`: equal within `SIGMAS` standard errors when
/// `α = 0`, and below `x0` by more than `SIGMAS` standard errors otherwise.
pub fn martingale_experiment(cfg: &ScenarioConfig, seed: u64, threads: Option<usize>) -> Result<ExperimentResult, HarnessError> {
    let outcomes = simulate_outcomes(cfg, cfg.engine, cfg.n, seed, 0..cfg.replicas, &[cfg.t_end], threads)?;
    let finals: Vec<f64> = outcomes.iter().map(|o| o.path.last().unwrap_or(o.final_value)).collect();
    let mut res = ExperimentResult::new("martingale", cfg, seed);
    let s = res.metric("x_at_t_end", &finals);
    res.tolerances.insert("sigmas".into(), SIGMAS);
    let ok = if cfg.alpha == 0.0 {
        (s.mean - cfg.x0).abs() <= SIGMAS * s.se
    } else {
        cfg.x0 - s.mean > SIGMAS * s.se
    };
    res.verdict = Verdict::from_checks(&[ok]);
    Ok(res)
}

/// Decay of `E[X_T]` and of the mass near 1 when `μ < α`.
pub fn extinction_threshold_experiment(cfg: &ScenarioConfig, seed: u64, threads: Option<usize>) -> Result<ExperimentResult, HarnessError> {
    let block = cfg
        .extinction
        .clone()
        .ok_or_else(|| HarnessError::Scenario("`extinction`: block required".into()))?;
    let mu = match mu_threshold(&cfg.lambda) {
        Ok(mu) => mu,
        Err(RatesError::AtomAtZeroPresent(m)) => {
            return Err(HarnessError::PreconditionViolated(format!(
                "extinction_threshold_experiment: μ is undefined with an atom at zero (mass {m})"
            )))
        }
        Err(e) => return Err(e.into()),
    };
    if mu >= cfg.alpha {
        return Err(HarnessError::PreconditionViolated(format!(
            "extinction_threshold_experiment: needs μ < α, got μ = {mu}, α = {}",
            cfg.alpha
        )));
    }
    let times = block.times.clone();
    let mut run_cfg = cfg.clone();
    run_cfg.t_end = *times.last().expect("validated");
    let outcomes = simulate_outcomes(&run_cfg, cfg.engine, cfg.n, seed, 0..cfg.replicas, &times, threads)?;
    let mut res = ExperimentResult::new("extinction", cfg, seed);
    res.value("mu", mu);
    let column = |i: usize| -> Vec<f64> { outcomes.iter().map(|o| o.path.points[i].1).collect() };
    for (i, t) in times.iter().enumerate() {
        res.metric(format!("x_at_{t}"), &column(i));
    }
    let first = column(0);
    let last = column(times.len() - 1);
    let drop: Vec<f64> = first.iter().zip(&last).map(|(a, b)| a - b).collect();
    let d = res.metric("paired_decrease", &drop);
    let tail: Vec<f64> = last.iter().map(|&x| f64::from(u8::from(x > 1.0 - block.delta))).collect();
    let tail = res.metric("near_one_fraction", &tail);
    res.tolerances.insert("sigmas".into(), SIGMAS);
    res.tolerances.insert("max_tail_fraction".into(), block.max_tail_fraction);
    res.tolerances.insert("delta".into(), block.delta);
    res.verdict = Verdict::from_checks(&[d.mean > SIGMAS * d.se, tail.mean <= block.max_tail_fraction]);
    Ok(res)
}

/// Distance between lookdown and SDE moments at `T` for each window size.
pub fn convergence_experiment(cfg: &ScenarioConfig, seed: u64, threads: Option<usize>) -> Result<ExperimentResult, HarnessError> {
    let block = cfg
        .convergence
        .clone()
        .ok_or_else(|| HarnessError::Scenario("`convergence`: block required".into()))?;
    let mut res = ExperimentResult::new("convergence", cfg, seed);
    let grid = [cfg.t_end];

    let sde = SdeEngine::new(&cfg.lambda, cfg.alpha, cfg.sde)?;
    let sde_reps = block.sde_replicas.unwrap_or(cfg.replicas);
    let reference = run_replicas(0..sde_reps, threads, |r| {
        sde.run(cfg.x0, cfg.t_end, &grid, &mut purpose_stream(seed, r, SDE_REFERENCE))
            .map(|run| run.x)
    })?;
    let sq: Vec<f64> = reference.iter().map(|x| x * x).collect();
    let s1 = res.metric("sde_m1", &reference);
    let s2 = res.metric("sde_m2", &sq);

    let mut distances = Vec::new();
    for &n in &block.n_list {
        let outcomes = simulate_outcomes(cfg, Engine::Lookdown, n, seed, 0..cfg.replicas, &grid, threads)?;
        let xs: Vec<f64> = outcomes.iter().map(|o| o.path.points[0].1).collect();
        let sq: Vec<f64> = xs.iter().map(|x| x * x).collect();
        let l1 = res.metric(format!("lookdown_m1_n{n}"), &xs);
        let l2 = res.metric(format!("lookdown_m2_n{n}"), &sq);
        let d1 = ((l1.mean - s1.mean).abs(), (l1.se * l1.se + s1.se * s1.se).sqrt());
        let d2 = ((l2.mean - s2.mean).abs(), (l2.se * l2.se + s2.se * s2.se).sqrt());
        let (d, se) = if d1.0 >= d2.0 { d1 } else { d2 };
        res.value(format!("d_n{n}"), d);
        res.value(format!("d_se_n{n}"), se);
        distances.push((d, se));
    }
    res.tolerances.insert("sigmas".into(), SIGMAS);
    let checks: Vec<bool> = distances
        .windows(2)
        .map(|w| w[1].0 <= w[0].0 + SIGMAS * (w[0].1 * w[0].1 + w[1].1 * w[1].1).sqrt())
        .collect();
    res.verdict = if distances.len() < 2 {
        res.notes.push("a single window size gives no trend".into());
        Verdict::Inconclusive
    } else {
        Verdict::from_checks(&checks)
    };
    Ok(res)
}

/// Chi-square statistic and degrees of freedom for equal cell probabilities
/// within each orbit of `{0,1}^k` under permutations (cells with equal sums).
/// Returns one `(sum, statistic, dof, p_value)` per orbit of size above one
/// that received observations.
pub fn orbit_tests(counts: &[u64], k: usize) -> Vec<(usize, f64, f64, f64)> {
    let mut out = Vec::new();
    for s in 1..k {
        let cells: Vec<u64> = (0..1usize << k)
            .filter(|c| c.count_ones() as usize == s)
            .map(|c| counts[c])
            .collect();
        let total: u64 = cells.iter().sum();
        if total == 0 {
            continue;
        }
        let expected = total as f64 / cells.len() as f64;
        let stat: f64 = cells.iter().map(|&o| (o as f64 - expected).powi(2) / expected).sum();
        let dof = (cells.len() - 1) as f64;
        out.push((s, stat, dof, chi_square_p_value(stat, dof)));
    }
    out
}

/// Exchangeability of the types on the first `k` levels at time `T`: a
/// chi-square test per permutation orbit, Bonferroni-corrected over orbits,
/// repeated on disjoint replica blocks and decided by majority.
pub fn exchangeability_test(cfg: &ScenarioConfig, seed: u64, threads: Option<usize>) -> Result<ExperimentResult, HarnessError> {
    if cfg.engine != Engine::Lookdown {
        return Err(HarnessError::PreconditionViolated("exchangeability_test: needs the lookdown engine".into()));
    }
    let block: ExchangeabilityBlock = cfg.exchangeability.unwrap_or_default();
    let k = block.k_levels;
    let eng = LookdownEngine::new(&cfg.lambda, cfg.lookdown_config(cfg.n))?;
    let mut res = ExperimentResult::new("exchangeability", cfg, seed);
    res.tolerances.insert("level".into(), block.level);
    let mut passes = 0;
    for b in 0..block.blocks {
        let range = b * cfg.replicas..(b + 1) * cfg.replicas;
        let cells = run_replicas(range, threads, |r| {
            let run = eng.run(seed, r, cfg.t_end, &[], false);
            let cell = run.state.types()[..k]
                .iter()
                .enumerate()
                .fold(0usize, |acc, (i, &t)| acc | (usize::from(t) << i));
            Ok::<_, HarnessError>(cell)
        })?;
        let mut counts = vec![0u64; 1 << k];
        for c in cells {
            counts[c] += 1;
        }
        let tests = orbit_tests(&counts, k);
        let threshold = block.level / tests.len().max(1) as f64;
        let min_p = tests.iter().map(|t| t.3).fold(1.0, f64::min);
        for (s, stat, dof, p) in &tests {
            res.value(format!("block{b}_orbit{s}_statistic"), *stat);
            res.value(format!("block{b}_orbit{s}_dof"), *dof);
            res.value(format!("block{b}_orbit{s}_p"), *p);
        }
        res.value(format!("block{b}_min_p"), min_p);
        if min_p >= threshold {
            passes += 1;
        }
    }
    res.value("blocks_passed", passes as f64);
    res.verdict = if 2 * passes > block.blocks { Verdict::Pass } else { Verdict::Fail };
    Ok(res)
}

/// Master seed of block `b` in a multi-block run started from `seed`.
pub fn block_seed(seed: u64, b: u64) -> u64 {
    seed.wrapping_add(b.wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Repeats `experiment` under `blocks` independent master seeds and decides
/// by majority. The per-block results are returned alongside.
pub fn majority_of<F>(seed: u64, blocks: u64, experiment: F) -> Result<(Verdict, Vec<ExperimentResult>), HarnessError>
where
    F: Fn(u64) -> Result<ExperimentResult, HarnessError>,
{
    let results = (0..blocks).map(|b| experiment(block_seed(seed, b))).collect::<Result<Vec<_>, _>>()?;
    let passes = results.iter().filter(|r| r.verdict == Verdict::Pass).count() as u64;
    let verdict = if blocks == 0 {
        Verdict::Inconclusive
    } else if 2 * passes > blocks {
        Verdict::Pass
    } else {
        Verdict::Fail
    };
    Ok((verdict, results))
}
