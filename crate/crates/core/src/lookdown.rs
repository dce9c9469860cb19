//! Finite lookdown particle system with selection against type 1.
//!
//! Levels are numbered from 1 in the public API. Type 1 is the selected-
//! against type `b`, type 0 is `B`. `X^N` is the proportion of type 1 among
//! the first `N` levels; the remaining `buffer` levels shield the window from
//! the truncation at the top.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_distr::{Binomial, Distribution, Exp1, Gamma};
use serde::{Deserialize, Serialize};

use crate::error::LookdownError;
use crate::measure::{BirthSampler, Component, LambdaMeasure};
use crate::path::Path;
use crate::rates::{continuous_total_rate, lambda_rate};
use crate::rng::{purpose_stream, substream, SimRng};
use crate::special::{binomial, ln_q, total_over_p2};

/// Types of levels `1..=L` and the reporting window size `N`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LookdownState {
    types: Vec<u8>,
    window: usize,
}

/// A reproduction event: every participating level except the lowest takes
/// the lowest one's type.
#[derive(Debug, Clone, PartialEq)]
pub struct BirthEvent {
    participants: Vec<usize>,
    pub p: f64,
}

impl BirthEvent {
    /// `participants` must be strictly increasing levels (from 1), at least two.
    pub fn new(participants: Vec<usize>, p: f64) -> Result<Self, LookdownError> {
        if participants.len() < 2 {
            return Err(LookdownError::InvalidEvent(format!(
                "a birth event needs at least two participants, got {}",
                participants.len()
            )));
        }
        if participants[0] == 0 || participants.windows(2).any(|w| w[1] <= w[0]) {
            return Err(LookdownError::InvalidEvent(
                "participants must be strictly increasing levels starting from 1".into(),
            ));
        }
        Ok(Self { participants, p })
    }

    pub fn participants(&self) -> &[usize] {
        &self.participants
    }
}

impl LookdownState {
    /// `N + buffer` i.i.d. Bernoulli(x) types, drawn from level 1 upwards.
    pub fn init<R: Rng + ?Sized>(n: usize, buffer: usize, x: f64, rng: &mut R) -> Self {
        let types = (0..n + buffer).map(|_| u8::from(rng.random::<f64>() < x)).collect();
        Self { types, window: n }
    }

    pub fn from_types(types: Vec<u8>, window: usize) -> Result<Self, LookdownError> {
        if window == 0 || window > types.len() {
            return Err(LookdownError::Config(format!(
                "window {window} must lie in 1..={}",
                types.len()
            )));
        }
        if types.iter().any(|&t| t > 1) {
            return Err(LookdownError::Config("types must be 0 or 1".into()));
        }
        Ok(Self { types, window })
    }

    pub fn types(&self) -> &[u8] {
        &self.types
    }

    /// `L`, the number of simulated levels.
    pub fn levels(&self) -> usize {
        self.types.len()
    }

    /// `N`, the reporting window.
    pub fn window(&self) -> usize {
        self.window
    }

    pub fn ones_in_window(&self) -> usize {
        count_ones(&self.types[..self.window])
    }

    /// `X^N`, the proportion of type 1 over levels `1..=N`.
    pub fn proportion(&self) -> f64 {
        self.ones_in_window() as f64 / self.window as f64
    }

    /// Lowest level holding type 0, searching all `L` levels; `None` when
    /// every level holds type 1.
    pub fn first_b_level(&self) -> Option<usize> {
        self.types.iter().position(|&t| t == 0).map(|i| i + 1)
    }

    /// Applies a birth event. Participants above `L` are ignored; with fewer
    /// than two participants inside `1..=L` nothing happens.
    pub fn apply_birth(&mut self, event: &BirthEvent) -> Result<(), LookdownError> {
        let l = self.levels();
        let inside = event.participants.partition_point(|&i| i <= l);
        self.birth_at(&event.participants[..inside]);
        Ok(())
    }

    /// Levels `< ℓ*` (the second participant) keep their types, the other
    /// participants take the lowest one's type, and the remaining levels
    /// above `ℓ*` shift up past the inserted copies.
    fn birth_at(&mut self, levels: &[usize]) {
        if levels.len() < 2 {
            return;
        }
        let l = self.types.len();
        let parent = self.types[levels[0] - 1];
        // Top-down: segment m (between participants m and m+1) shifts by m.
        for m in (1..levels.len()).rev() {
            let at = levels[m] - 1;
            let end = if m + 1 < levels.len() { levels[m + 1] - 1 } else { l };
            if at + 1 < end {
                self.types.copy_within(at + 1 - m..end - m, at + 1);
            }
            self.types[at] = parent;
        }
    }

    /// Death at `level`: if it holds type 1, levels above shift down by one
    /// and level `L` receives `refill`. Type 0 levels are unaffected.
    pub fn apply_death(&mut self, level: usize, refill: u8) -> Result<(), LookdownError> {
        let l = self.levels();
        if level == 0 || level > l {
            return Err(LookdownError::InvalidEvent(format!("death level {level} outside 1..={l}")));
        }
        if self.types[level - 1] == 1 {
            self.types.copy_within(level..l, level - 1);
            self.types[l - 1] = refill.min(1);
        }
        Ok(())
    }

    /// Single birth from level `i` onto level `j > i`: level `j` takes the
    /// type of `i`, levels above `j` shift up, the top level is discarded.
    pub fn apply_single_birth(&mut self, i: usize, j: usize) -> Result<(), LookdownError> {
        let l = self.levels();
        if i == 0 || i >= j || j > l {
            return Err(LookdownError::InvalidEvent(format!(
                "single birth needs 1 <= i < j <= {l}, got i={i}, j={j}"
            )));
        }
        self.birth_at(&[i, j]);
        Ok(())
    }

    fn fixed_value(&self) -> Option<u8> {
        if self.ones_in_window() == 0 {
            Some(0)
        } else if count_ones(&self.types) == self.types.len() {
            Some(1)
        } else {
            None
        }
    }
}

fn count_ones(t: &[u8]) -> usize {
    t.iter().map(|&v| v as usize).sum()
}

/// How level `L` is refilled after a death.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Refill {
    /// Bernoulli draw at the current window proportion.
    #[default]
    MeanField,
    /// Always type 1.
    TypeOne,
}

/// How reproduction events are generated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BirthScheme {
    /// One Poisson clock for all events that touch two of the `L` levels.
    #[default]
    Aggregate,
    /// Separate clocks per level, keyed so that runs with a larger buffer
    /// see the same events on the shared levels.
    LevelIndexed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LookdownConfig {
    pub n: usize,
    pub buffer: usize,
    pub alpha: f64,
    pub x0: f64,
    #[serde(default)]
    pub refill: Refill,
    #[serde(default)]
    pub scheme: BirthScheme,
}

impl LookdownConfig {
    /// Window `n` with the default buffer of `n` extra levels.
    pub fn new(n: usize, alpha: f64, x0: f64) -> Self {
        Self {
            n,
            buffer: n,
            alpha,
            x0,
            refill: Refill::MeanField,
            scheme: BirthScheme::Aggregate,
        }
    }

    pub fn levels(&self) -> usize {
        self.n + self.buffer
    }

    fn validate(&self) -> Result<(), LookdownError> {
        if self.n < 2 {
            return Err(LookdownError::Config(format!("N must be at least 2, got {}", self.n)));
        }
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return Err(LookdownError::Config(format!("alpha must be finite and nonnegative, got {}", self.alpha)));
        }
        if !(0.0..=1.0).contains(&self.x0) {
            return Err(LookdownError::Config(format!("x0 must lie in [0, 1], got {}", self.x0)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Fixation {
    pub time: f64,
    pub value: u8,
}

/// Output of one lookdown run.
#[derive(Debug, Clone)]
pub struct LookdownRun {
    /// `X^N` at the grid times that do not exceed the horizon.
    pub path: Path,
    /// State at the end of the run.
    pub state: LookdownState,
    /// First time the window is all type 0 or every level is type 1.
    pub fixation: Option<Fixation>,
    pub deaths: u64,
    pub births: u64,
}

/// Per-level birth clocks for [`BirthScheme::LevelIndexed`].
#[derive(Debug, Clone)]
struct LevelBirth {
    rate: f64,
    /// Cumulative weights over the measure's components.
    cumulative: Vec<f64>,
}

/// A configured lookdown simulator; cheap to share between replicas.
#[derive(Debug, Clone)]
pub struct LookdownEngine {
    cfg: LookdownConfig,
    components: Vec<Component>,
    atom0: f64,
    birth: Option<BirthSampler>,
    multi_rate: f64,
    level_births: Vec<LevelBirth>,
}

const BIRTH_STREAM: u64 = 1 << 32;
const DEATH_STREAM: u64 = 2 << 32;
const SINGLE_STREAM: u64 = 3 << 32;
const INIT_STREAM: u64 = 0;

impl LookdownEngine {
    pub fn new(measure: &LambdaMeasure, cfg: LookdownConfig) -> Result<Self, LookdownError> {
        cfg.validate()?;
        let l = cfg.levels() as u64;
        let multi_rate = continuous_total_rate(measure, l);
        let birth = if measure.continuous_mass() > 0.0 {
            Some(BirthSampler::new(measure, l)?)
        } else {
            None
        };
        let mut level_births = Vec::new();
        if cfg.scheme == BirthScheme::LevelIndexed {
            for j in 2..=l {
                let mut cumulative = Vec::new();
                let mut acc = 0.0;
                for c in measure.components() {
                    let single = LambdaMeasure::new(0.0, vec![*c]).expect("valid component");
                    acc += (j - 1) as f64 * lambda_rate(&single, j, 2);
                    cumulative.push(acc);
                }
                level_births.push(LevelBirth { rate: acc, cumulative });
            }
        }
        Ok(Self {
            cfg,
            components: measure.components().to_vec(),
            atom0: measure.atom0(),
            birth,
            multi_rate,
            level_births,
        })
    }

    pub fn config(&self) -> &LookdownConfig {
        &self.cfg
    }

    /// Rate of reproduction events touching at least two of the `L` levels,
    /// excluding single births from the atom at zero.
    pub fn multi_birth_rate(&self) -> f64 {
        self.multi_rate
    }

    /// Runs replica `replica` of a run seeded with `master` up to `t_end`,
    /// recording `X^N` at `grid` times. With `stop_at_fixation` the run ends
    /// at fixation and later grid points repeat the fixed value.
    pub fn run(&self, master: u64, replica: u64, t_end: f64, grid: &[f64], stop_at_fixation: bool) -> LookdownRun {
        match self.cfg.scheme {
            BirthScheme::Aggregate => {
                let mut rng = substream(master, replica);
                self.run_aggregate(&mut rng, t_end, grid, stop_at_fixation)
            }
            BirthScheme::LevelIndexed => self.run_level_indexed(master, replica, t_end, grid, stop_at_fixation),
        }
    }

    /// Aggregate-scheme run driven by a caller-supplied generator.
    pub fn run_aggregate<R: Rng + ?Sized>(
        &self,
        rng: &mut R,
        t_end: f64,
        grid: &[f64],
        stop_at_fixation: bool,
    ) -> LookdownRun {
        let l = self.cfg.levels();
        let mut state = LookdownState::init(self.cfg.n, self.cfg.buffer, self.cfg.x0, rng);
        let single_rate = self.atom0 * binomial(l as u64, 2);
        let death_rate = self.cfg.alpha * l as f64;
        let total = self.multi_rate + single_rate + death_rate;
        let mut rec = Recorder::new(grid, t_end);
        let mut clock = 0.0;
        let mut fixation = None;
        let (mut births, mut deaths) = (0, 0);
        let mut scratch = Vec::new();
        loop {
            if stop_at_fixation && fixation.is_none() {
                if let Some(value) = state.fixed_value() {
                    fixation = Some(Fixation { time: clock, value });
                    break;
                }
            }
            let t_next = if total > 0.0 {
                clock + rng.sample::<f64, _>(Exp1) / total
            } else {
                f64::INFINITY
            };
            rec.record_before(t_next, &state);
            if t_next > t_end {
                break;
            }
            clock = t_next;
            let u = rng.random::<f64>() * total;
            if u < self.multi_rate {
                let sampler = self.birth.as_ref().expect("continuous part present");
                let (p, q) = sampler.sample(rng);
                let k = sample_k_at_least_two(l, p, q, rng);
                scratch.clear();
                scratch.extend(index::sample(rng, l, k).into_iter().map(|i| i + 1));
                scratch.sort_unstable();
                state.birth_at(&scratch);
                births += 1;
            } else if u < self.multi_rate + single_rate {
                let a = rng.random_range(1..=l);
                let mut b = rng.random_range(1..l);
                if b >= a {
                    b += 1;
                }
                state.birth_at(&[a.min(b), a.max(b)]);
                births += 1;
            } else {
                let level = rng.random_range(1..=l);
                if state.types[level - 1] == 1 {
                    let refill = match self.cfg.refill {
                        Refill::MeanField => u8::from(rng.random::<f64>() < state.proportion()),
                        Refill::TypeOne => 1,
                    };
                    state.apply_death(level, refill).expect("level in range");
                }
                deaths += 1;
            }
        }
        rec.finish(&state);
        LookdownRun {
            path: rec.path,
            state,
            fixation,
            deaths,
            births,
        }
    }

    fn run_level_indexed(
        &self,
        master: u64,
        replica: u64,
        t_end: f64,
        grid: &[f64],
        stop_at_fixation: bool,
    ) -> LookdownRun {
        let l = self.cfg.levels();
        let mut init_rng = purpose_stream(master, replica, INIT_STREAM);
        let mut state = LookdownState::init(self.cfg.n, self.cfg.buffer, self.cfg.x0, &mut init_rng);

        #[derive(Clone, Copy)]
        enum Kind {
            Birth,
            Death,
            Single,
        }
        struct Stream {
            kind: Kind,
            level: usize,
            rate: f64,
            rng: SimRng,
        }
        let mut streams = Vec::new();
        let mut heap = BinaryHeap::new();
        let mut add = |kind: Kind, level: usize, rate: f64, id: u64, streams: &mut Vec<Stream>| {
            if rate <= 0.0 {
                return;
            }
            let mut rng = purpose_stream(master, replica, id + level as u64);
            let t = rng.sample::<f64, _>(Exp1) / rate;
            heap.push(Reverse((OrdF64(t), streams.len())));
            streams.push(Stream { kind, level, rate, rng });
        };
        for j in 1..=l {
            if j >= 2 {
                add(Kind::Birth, j, self.level_births[j - 2].rate, BIRTH_STREAM, &mut streams);
                add(Kind::Single, j, self.atom0 * (j - 1) as f64, SINGLE_STREAM, &mut streams);
            }
            add(Kind::Death, j, self.cfg.alpha, DEATH_STREAM, &mut streams);
        }

        let mut rec = Recorder::new(grid, t_end);
        let mut clock = 0.0;
        let mut fixation = None;
        let (mut births, mut deaths) = (0, 0);
        let mut scratch = Vec::new();
        loop {
            if stop_at_fixation && fixation.is_none() {
                if let Some(value) = state.fixed_value() {
                    fixation = Some(Fixation { time: clock, value });
                    break;
                }
            }
            let Some(Reverse((OrdF64(t), s))) = heap.pop() else {
                rec.record_before(f64::INFINITY, &state);
                break;
            };
            rec.record_before(t, &state);
            if t > t_end {
                break;
            }
            clock = t;
            let stream = &mut streams[s];
            let j = stream.level;
            match stream.kind {
                Kind::Birth => {
                    let seed = stream.rng.random::<u64>();
                    let mut ev = SimRng::seed_from_u64(seed);
                    self.level_event(j, l, &mut ev, &mut scratch);
                    state.birth_at(&scratch);
                    births += 1;
                }
                Kind::Single => {
                    let i = stream.rng.random_range(1..j);
                    state.birth_at(&[i, j]);
                    births += 1;
                }
                Kind::Death => {
                    let u = stream.rng.random::<f64>();
                    if state.types[j - 1] == 1 {
                        let refill = match self.cfg.refill {
                            Refill::MeanField => u8::from(u < state.proportion()),
                            Refill::TypeOne => 1,
                        };
                        state.apply_death(j, refill).expect("level in range");
                    }
                    deaths += 1;
                }
            }
            let next = t + stream.rng.sample::<f64, _>(Exp1) / stream.rate;
            heap.push(Reverse((OrdF64(next), s)));
        }
        rec.finish(&state);
        LookdownRun {
            path: rec.path,
            state,
            fixation,
            deaths,
            births,
        }
    }

    /// Participants of an event whose second-lowest participant is level `j`:
    /// the lowest is uniform below `j`, levels above `j` join independently
    /// with probability `p`.
    fn level_event<R: Rng + ?Sized>(&self, j: usize, l: usize, rng: &mut R, out: &mut Vec<usize>) {
        let lb = &self.level_births[j - 2];
        let u = rng.random::<f64>() * lb.rate;
        let c = lb.cumulative.iter().position(|&w| u < w).unwrap_or(lb.cumulative.len() - 1);
        let (p, q) = match self.components[c] {
            Component::PointMass { location, .. } => (location, 1.0 - location),
            other => {
                let (a, b, _) = other.density().expect("density component");
                let x = Gamma::new(a, 1.0).expect("positive shape").sample(rng);
                let y = Gamma::new(b + (j - 2) as f64, 1.0).expect("positive shape").sample(rng);
                (x / (x + y), y / (x + y))
            }
        };
        out.clear();
        out.push(rng.random_range(1..j));
        out.push(j);
        let lq = ln_q(p, q);
        let mut k = j;
        loop {
            let v = 1.0 - rng.random::<f64>();
            let skip = if lq < 0.0 { (v.ln() / lq).floor() } else { f64::INFINITY };
            if skip >= (l - k) as f64 {
                break;
            }
            k += skip as usize + 1;
            out.push(k);
        }
    }
}

/// `K ~ Binomial(L, p)` conditioned on `K >= 2`.
fn sample_k_at_least_two<R: Rng + ?Sized>(l: usize, p: f64, q: f64, rng: &mut R) -> usize {
    let lf = l as f64;
    if lf * p >= 1.0 {
        let bin = Binomial::new(l as u64, p).expect("valid binomial");
        loop {
            let k = bin.sample(rng) as usize;
            if k >= 2 {
                return k;
            }
        }
    }
    // Inverse CDF from k = 2 in units of p², since P(K >= 2) may be tiny.
    let mass = total_over_p2(l as u64, p, q);
    let mut pmf = lf * (lf - 1.0) / 2.0 * ((lf - 2.0) * ln_q(p, q)).exp();
    let mut u = rng.random::<f64>() * mass;
    let ratio = p / q;
    let mut k = 2;
    while k < l {
        u -= pmf;
        if u < 0.0 {
            break;
        }
        pmf *= ratio * (lf - k as f64) / (k as f64 + 1.0);
        k += 1;
    }
    k
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct OrdF64(f64);

impl Eq for OrdF64 {}

impl PartialOrd for OrdF64 {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for OrdF64 {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}

/// Writes `X^N` at grid times as the clock passes them.
struct Recorder<'a> {
    grid: &'a [f64],
    t_end: f64,
    next: usize,
    path: Path,
}

impl<'a> Recorder<'a> {
    fn new(grid: &'a [f64], t_end: f64) -> Self {
        Self {
            grid,
            t_end,
            next: 0,
            path: Path::default(),
        }
    }

    /// Records the current state at grid times strictly before `t`.
    fn record_before(&mut self, t: f64, state: &LookdownState) {
        while self.next < self.grid.len() && self.grid[self.next] < t && self.grid[self.next] <= self.t_end {
            self.path.push(self.grid[self.next], state.proportion());
            self.next += 1;
        }
    }

    fn finish(&mut self, state: &LookdownState) {
        self.record_before(f64::INFINITY, state);
    }
}

/// Simulates `X^N` with the aggregate scheme, recording at `grid`.
pub fn simulate<R: Rng + ?Sized>(
    measure: &LambdaMeasure,
    cfg: LookdownConfig,
    t_end: f64,
    rng: &mut R,
    grid: &[f64],
) -> Result<Path, LookdownError> {
    let engine = LookdownEngine::new(measure, LookdownConfig { scheme: BirthScheme::Aggregate, ..cfg })?;
    Ok(engine.run_aggregate(rng, t_end, grid, false).path)
}
