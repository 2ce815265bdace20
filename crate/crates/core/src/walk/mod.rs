//! First-passage random walk on the weight simplex.
//!
//! Weights are quantised to an integer grid kᵢ with Σkᵢ = M. Each step picks
//! an unordered pair of alive states uniformly, then a direction uniformly,
//! and moves one grid unit from one state to the other. The transfer is
//! symmetric, so every kᵢ is a martingale and the probability that state i
//! ends up holding all M units is exactly kᵢ/M. A state whose count reaches
//! zero is eliminated and never re-enters; the walk stops at a simplex vertex.
//!
//! The spectator cross terms of the [`JointState`] follow the weights via
//! [`JointState::update_cross_terms`] but play no part in the dynamics.

mod chain;

pub use chain::{exact_absorption, ChainError};

use std::sync::LazyLock;

use rand::RngCore;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{stream_rng, BitSource};
use crate::states::{JointState, QuantumState, StateError};

/// Trials per parallel work unit in [`born_statistics`].
const TRIAL_CHUNK: u64 = 256;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum WalkError {
    #[error("invalid walk configuration: {0}")]
    InvalidConfig(String),
    #[error("state {state} has weight {weight} but rounds to 0 on a grid of {resolution}; raise the grid resolution")]
    DegenerateGrid { state: usize, weight: f64, resolution: u64 },
    #[error("a walk step needs at least 2 alive states, found {alive}")]
    NoAlivePair { alive: usize },
    #[error("walk did not reach a vertex within {steps} steps")]
    MaxStepsExceeded { steps: u64 },
    #[error("{excluded} of {attempted} trials hit the step cap (more than 1%)")]
    TooManyExcluded { excluded: u64, attempted: u64 },
    #[error(transparent)]
    State(#[from] StateError),
}

/// Grid resolution, step cap and seed for a walk or a batch of walks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WalkConfig {
    pub grid_resolution: u64,
    pub max_steps: u64,
    pub seed: u64,
}

impl WalkConfig {
    pub const DEFAULT_RESOLUTION: u64 = 1000;

    /// Config with the default step cap of 100·M².
    pub fn new(grid_resolution: u64, seed: u64) -> Result<Self, WalkError> {
        let max_steps = grid_resolution.saturating_mul(grid_resolution).saturating_mul(100);
        Self { grid_resolution, max_steps, seed }.validated()
    }

    pub fn with_max_steps(self, max_steps: u64) -> Result<Self, WalkError> {
        Self { max_steps, ..self }.validated()
    }

    pub fn validated(self) -> Result<Self, WalkError> {
        if self.grid_resolution < 2 {
            return Err(WalkError::InvalidConfig(format!(
                "grid resolution must be at least 2, got {}",
                self.grid_resolution
            )));
        }
        if self.max_steps < 1 {
            return Err(WalkError::InvalidConfig("max_steps must be at least 1".into()));
        }
        Ok(self)
    }
}

impl Default for WalkConfig {
    fn default() -> Self {
        Self::new(Self::DEFAULT_RESOLUTION, 0).expect("default config is valid")
    }
}

/// A state dropping out of the game at a given step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Elimination {
    pub state: usize,
    pub step: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WalkOutcome {
    pub winner: usize,
    pub steps_taken: u64,
    /// Every loser in elimination order; states that start with zero weight
    /// are eliminated at step 0.
    pub elimination_order: Vec<Elimination>,
}

/// Winner frequencies over a batch of independent walks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BornStatistics {
    /// Completed trials; trials that hit the step cap are counted in `excluded`.
    pub trials: u64,
    pub excluded: u64,
    pub winner_counts: Vec<u64>,
    pub frequencies: Vec<f64>,
    /// Binomial standard error √(f(1−f)/trials) per state.
    pub stderr: Vec<f64>,
    pub mean_steps: f64,
    pub steps_stderr: f64,
}

/// Random source used by the walk engine.
pub type WalkRng = BitSource<ChaCha8Rng>;

/// Independent random stream for trial `trial` of a run seeded with `seed`.
pub fn trial_rng(seed: u64, trial: u64) -> WalkRng {
    BitSource::new(stream_rng(seed, trial))
}

/// Largest-remainder rounding of `weights` onto a grid of `resolution` units.
///
/// Returns kᵢ ≥ 0 with Σkᵢ = M minimising Σ|kᵢ − M·wᵢ|; leftover units go to
/// the largest fractional parts, ties to the lowest index.
pub fn quantize_weights(weights: &[f64], resolution: u64) -> Result<Vec<u64>, WalkError> {
    if resolution < 2 {
        return Err(WalkError::InvalidConfig(format!(
            "grid resolution must be at least 2, got {resolution}"
        )));
    }
    let n = weights.len();
    if n < 2 {
        return Err(StateError::TooFewStates(n).into());
    }
    let sum: f64 = weights.iter().sum();
    if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) || (sum - 1.0).abs() > 1e-9 {
        return Err(StateError::NotOnSimplex { sum }.into());
    }
    let m = resolution as f64;
    let scaled: Vec<f64> = weights.iter().map(|w| w / sum * m).collect();
    let mut grid: Vec<u64> = scaled.iter().map(|x| x.floor() as u64).collect();
    let assigned: u64 = grid.iter().sum();
    let leftover = resolution.saturating_sub(assigned) as usize;

    // Fractional parts are compared on a 1e-9 lattice so that rounding noise
    // in the inputs does not break exact ties.
    let mut order: Vec<(i64, usize)> = scaled
        .iter()
        .zip(&grid)
        .enumerate()
        .map(|(i, (x, k))| (((x - *k as f64) * 1e9).round() as i64, i))
        .collect();
    order.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    for &(_, i) in order.iter().cycle().take(leftover) {
        grid[i] += 1;
    }
    debug_assert_eq!(grid.iter().sum::<u64>(), resolution);

    if resolution < 10 * n as u64 {
        if let Some(i) = (0..n).find(|&i| weights[i] > 0.0 && grid[i] == 0) {
            return Err(WalkError::DegenerateGrid { state: i, weight: weights[i], resolution });
        }
    }
    Ok(grid)
}

/// One unbiased transfer between a uniformly chosen pair of alive states.
///
/// Returns the state eliminated by this step, if any.
pub fn walk_step<R: RngCore>(
    grid: &mut [u64],
    alive: &mut [bool],
    rng: &mut BitSource<R>,
) -> Result<Option<usize>, WalkError> {
    let live: Vec<usize> = (0..grid.len()).filter(|&i| alive[i]).collect();
    if live.len() < 2 {
        return Err(WalkError::NoAlivePair { alive: live.len() });
    }
    let (donor, receiver) = pick_transfer(&transfer_table(&live), rng);
    grid[donor] -= 1;
    grid[receiver] += 1;
    if grid[donor] == 0 {
        alive[donor] = false;
        return Ok(Some(donor));
    }
    Ok(None)
}

/// Ordered pairs (donor, receiver) of distinct entries of `live`, indexed by
/// a uniform draw. Uniform over ordered pairs is the same as a uniform
/// unordered pair followed by a fair coin for the direction.
fn transfer_table(live: &[usize]) -> Vec<(usize, usize)> {
    let mut pairs = Vec::with_capacity(live.len() * live.len().saturating_sub(1));
    for &donor in live {
        pairs.extend(live.iter().filter(|&&r| r != donor).map(|&receiver| (donor, receiver)));
    }
    pairs
}

#[inline]
fn pick_transfer<R: RngCore>(pairs: &[(usize, usize)], rng: &mut BitSource<R>) -> (usize, usize) {
    pairs[rng.below(pairs.len() as u64) as usize]
}

/// Steps per [`Walker::triple_block`].
const TRIPLE_STEPS: u64 = 5;

/// Net change of three counts over five steps, indexed by
/// `digits << 5 | directions`: `digits` < 3⁵ holds one base-3 digit per step
/// choosing the pair (0,1), (0,2) or (1,2), and each direction bit picks
/// which member of the pair donates.
static TRIPLE_TABLE: LazyLock<Vec<[i8; 3]>> = LazyLock::new(|| {
    const PAIRS: [(usize, usize); 3] = [(0, 1), (0, 2), (1, 2)];
    let mut table = vec![[0i8; 3]; 243 << 5];
    for digits in 0..243usize {
        for directions in 0..32usize {
            let entry = &mut table[digits << 5 | directions];
            let mut rest = digits;
            for step in 0..5 {
                let (a, b) = PAIRS[rest % 3];
                rest /= 3;
                let (donor, receiver) = if directions >> step & 1 == 1 { (a, b) } else { (b, a) };
                entry[donor] -= 1;
                entry[receiver] += 1;
            }
        }
    }
    table
});

/// Integer-grid walker shared by every entry point.
struct Walker {
    grid: Vec<u64>,
    resolution: u64,
    alive: Vec<bool>,
    live: Vec<usize>,
    pairs: Vec<(usize, usize)>,
    steps: u64,
    eliminations: Vec<Elimination>,
}

impl Walker {
    fn new(grid: Vec<u64>) -> Self {
        let resolution = grid.iter().sum();
        let alive: Vec<bool> = grid.iter().map(|&k| k > 0).collect();
        let live: Vec<usize> = (0..grid.len()).filter(|&i| alive[i]).collect();
        let pairs = transfer_table(&live);
        let eliminations = (0..grid.len())
            .filter(|&i| !alive[i])
            .map(|state| Elimination { state, step: 0 })
            .collect();
        Self { grid, resolution, alive, live, pairs, steps: 0, eliminations }
    }

    fn finished(&self) -> bool {
        self.live.len() <= 1
    }

    /// Single step; returns whether a state was eliminated.
    #[inline]
    fn step<R: RngCore>(&mut self, rng: &mut BitSource<R>) -> bool {
        let (donor, receiver) = pick_transfer(&self.pairs, rng);
        self.grid[donor] -= 1;
        self.grid[receiver] += 1;
        self.steps += 1;
        if self.grid[donor] == 0 {
            self.alive[donor] = false;
            self.live.retain(|&i| i != donor);
            self.pairs = transfer_table(&self.live);
            self.eliminations.push(Elimination { state: donor, step: self.steps });
            return true;
        }
        false
    }

    /// With two states left and both further from zero than the buffered
    /// bits, consumes the whole buffer at once: the net transfer is
    /// popcount − (count − popcount), exactly what the same bits would do
    /// one step at a time. Returns false when the block is not safe.
    #[inline]
    fn pair_block<R: RngCore>(&mut self, rng: &mut BitSource<R>, max_steps: u64) -> bool {
        let (i, j) = (self.live[0], self.live[1]);
        let count = rng.ensure_buffered() as u64;
        if self.grid[i] <= count || self.grid[j] <= count || self.steps + count > max_steps {
            return false;
        }
        let (count, ones) = rng.take_block();
        let (count, ones) = (count as u64, ones as u64);
        self.grid[i] = self.grid[i] + ones - (count - ones);
        self.grid[j] = self.grid[j] + (count - ones) - ones;
        self.steps += count;
        true
    }

    /// With three states left, all above [`TRIPLE_STEPS`], applies five
    /// steps from one table lookup. No state can reach zero inside the block,
    /// so the winner has the same law as under single steps; the random bits
    /// are consumed differently, so paths differ from [`Walker::step`].
    #[inline]
    fn triple_block<R: RngCore>(&mut self, rng: &mut BitSource<R>, max_steps: u64) -> bool {
        let live = [self.live[0], self.live[1], self.live[2]];
        if live.iter().any(|&i| self.grid[i] <= TRIPLE_STEPS) || self.steps + TRIPLE_STEPS > max_steps {
            return false;
        }
        let index = loop {
            let v = rng.bits(13) as usize;
            if v >> 5 < 243 {
                break v;
            }
        };
        let delta = TRIPLE_TABLE[index];
        for (&i, d) in live.iter().zip(delta) {
            self.grid[i] = self.grid[i].wrapping_add_signed(d as i64);
        }
        self.steps += TRIPLE_STEPS;
        true
    }

    fn run<R: RngCore>(&mut self, rng: &mut BitSource<R>, max_steps: u64) -> Result<(), WalkError> {
        while !self.finished() {
            if self.live.len() == 2 && self.pair_block(rng, max_steps) {
                continue;
            }
            if self.live.len() == 3 && self.triple_block(rng, max_steps) {
                continue;
            }
            if self.steps >= max_steps {
                return Err(WalkError::MaxStepsExceeded { steps: self.steps });
            }
            self.step(rng);
        }
        debug_assert_eq!(self.grid.iter().sum::<u64>(), self.resolution);
        Ok(())
    }

    fn outcome(&self) -> WalkOutcome {
        WalkOutcome {
            winner: self.live[0],
            steps_taken: self.steps,
            elimination_order: self.eliminations.clone(),
        }
    }
}

fn check_joint(joint: &JointState) -> Result<(), WalkError> {
    if joint.alive().iter().any(|&a| !a) {
        return Err(WalkError::InvalidConfig("walk must start with every state alive".into()));
    }
    Ok(())
}

/// Walks `joint` to a simplex vertex. On return `joint` holds the final
/// vertex weights with every cross term involving a loser set to zero.
pub fn run_walk<R: RngCore>(
    joint: &mut JointState,
    config: &WalkConfig,
    rng: &mut BitSource<R>,
) -> Result<WalkOutcome, WalkError> {
    let config = config.validated()?;
    check_joint(joint)?;
    let mut walker = Walker::new(quantize_weights(joint.weights(), config.grid_resolution)?);
    walker.run(rng, config.max_steps)?;
    joint.set_grid(&walker.grid, config.grid_resolution);
    Ok(walker.outcome())
}

/// As [`run_walk`], stepping one unit at a time and refreshing the cross
/// terms after every step. Outcomes follow the same law as [`run_walk`] and
/// coincide draw for draw while at most two states are alive. `observe` sees the start (step 0) and every
/// subsequent step.
pub fn run_walk_traced<R: RngCore>(
    joint: &mut JointState,
    config: &WalkConfig,
    rng: &mut BitSource<R>,
    mut observe: impl FnMut(u64, &JointState),
) -> Result<WalkOutcome, WalkError> {
    let config = config.validated()?;
    check_joint(joint)?;
    let mut walker = Walker::new(quantize_weights(joint.weights(), config.grid_resolution)?);
    joint.set_grid(&walker.grid, config.grid_resolution);
    observe(0, joint);
    while !walker.finished() {
        if walker.steps >= config.max_steps {
            return Err(WalkError::MaxStepsExceeded { steps: walker.steps });
        }
        walker.step(rng);
        joint.set_grid(&walker.grid, config.grid_resolution);
        observe(walker.steps, joint);
    }
    Ok(walker.outcome())
}

/// Walk started directly from grid counts (Σ = M, at least one positive).
pub fn run_grid_walk<R: RngCore>(
    grid: &[u64],
    max_steps: u64,
    rng: &mut BitSource<R>,
) -> Result<WalkOutcome, WalkError> {
    if grid.len() < 2 {
        return Err(StateError::TooFewStates(grid.len()).into());
    }
    if grid.iter().all(|&k| k == 0) {
        return Err(StateError::AllZero.into());
    }
    let mut walker = Walker::new(grid.to_vec());
    walker.run(rng, max_steps)?;
    Ok(walker.outcome())
}

#[derive(Debug, Clone, Default)]
struct Tally {
    counts: Vec<u64>,
    excluded: u64,
    steps: u128,
    steps_sq: u128,
}

impl Tally {
    fn merge(mut self, other: Tally) -> Tally {
        if self.counts.is_empty() {
            return other;
        }
        for (a, b) in self.counts.iter_mut().zip(other.counts) {
            *a += b;
        }
        self.excluded += other.excluded;
        self.steps += other.steps;
        self.steps_sq += other.steps_sq;
        self
    }
}

/// Runs `trials` independent walks from the joint state of `state` and
/// tallies the winners. Trial t draws from stream t of `config.seed`, so the
/// result does not depend on the worker-thread count.
pub fn born_statistics(
    state: &QuantumState,
    trials: u64,
    config: &WalkConfig,
) -> Result<BornStatistics, WalkError> {
    let config = config.validated()?;
    let joint = JointState::form(state);
    let grid = quantize_weights(joint.weights(), config.grid_resolution)?;
    tally(&grid, trials, &config, |rng| {
        let mut joint = joint.clone();
        run_walk(&mut joint, &config, rng).map(|o| (o.winner, o.steps_taken))
    })
}

/// As [`born_statistics`], starting every trial from the grid counts `grid`
/// (Σ = `config.grid_resolution`).
pub fn grid_statistics(grid: &[u64], trials: u64, config: &WalkConfig) -> Result<BornStatistics, WalkError> {
    let config = config.validated()?;
    if grid.iter().sum::<u64>() != config.grid_resolution {
        return Err(WalkError::InvalidConfig(format!(
            "grid counts sum to {}, expected {}",
            grid.iter().sum::<u64>(),
            config.grid_resolution
        )));
    }
    tally(grid, trials, &config, |rng| {
        run_grid_walk(grid, config.max_steps, rng).map(|o| (o.winner, o.steps_taken))
    })
}

fn tally<F>(grid: &[u64], trials: u64, config: &WalkConfig, trial: F) -> Result<BornStatistics, WalkError>
where
    F: Fn(&mut WalkRng) -> Result<(usize, u64), WalkError> + Sync,
{
    if trials == 0 {
        return Err(WalkError::InvalidConfig("trials must be at least 1".into()));
    }
    let n = grid.len();
    let chunks = trials.div_ceil(TRIAL_CHUNK);
    let tallies: Vec<Result<Tally, WalkError>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut t = Tally { counts: vec![0; n], ..Tally::default() };
            for i in c * TRIAL_CHUNK..((c + 1) * TRIAL_CHUNK).min(trials) {
                let mut rng = trial_rng(config.seed, i);
                match trial(&mut rng) {
                    Ok((winner, steps)) => {
                        t.counts[winner] += 1;
                        t.steps += steps as u128;
                        t.steps_sq += (steps as u128) * (steps as u128);
                    }
                    Err(WalkError::MaxStepsExceeded { .. }) => t.excluded += 1,
                    Err(e) => return Err(e),
                }
            }
            Ok(t)
        })
        .collect();
    let mut total = Tally { counts: vec![0; n], ..Tally::default() };
    for t in tallies {
        total = total.merge(t?);
    }
    if total.excluded * 100 > trials || total.excluded == trials {
        return Err(WalkError::TooManyExcluded { excluded: total.excluded, attempted: trials });
    }
    let done = trials - total.excluded;
    let nf = done as f64;
    let frequencies: Vec<f64> = total.counts.iter().map(|&c| c as f64 / nf).collect();
    let stderr = frequencies.iter().map(|f| (f * (1.0 - f) / nf).sqrt()).collect();
    let mean_steps = total.steps as f64 / nf;
    let var = if done > 1 {
        ((total.steps_sq as f64) - nf * mean_steps * mean_steps).max(0.0) / (nf - 1.0)
    } else {
        0.0
    };
    Ok(BornStatistics {
        trials: done,
        excluded: total.excluded,
        winner_counts: total.counts,
        frequencies,
        stderr,
        mean_steps,
        steps_stderr: (var / nf).sqrt(),
    })
}

#[cfg(test)]
mod tests;
