//! Quantum amplitudes and the coupled system-detector state.
//!
//! Coupling each quantum state |i⟩ to its detector image |i*⟩ produces a
//! joint object whose "player" terms carry the squared amplitudes |aᵢ|² and
//! whose off-diagonal "spectator" terms carry aᵢ·aⱼ*. The squared amplitudes
//! form a point on the probability simplex; that point is what the
//! first-passage walk moves. The joint object is not a unit-norm wavefunction
//! and is never renormalised as one.

use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Norms below this are treated as an all-zero amplitude vector.
const ZERO_NORM: f64 = 1e-300;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StateError {
    #[error("a quantum state needs at least 2 amplitudes, got {0}")]
    TooFewStates(usize),
    #[error("amplitude vector has zero norm")]
    AllZero,
    #[error("cannot parse amplitudes: {0}")]
    Parse(String),
    #[error("weights must be non-negative and sum to 1 (sum = {sum})")]
    NotOnSimplex { sum: f64 },
    #[error("expected {expected} weights, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("state {0} was eliminated and cannot regain weight")]
    Revived(usize),
}

/// A normalised vector of N ≥ 2 complex amplitudes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantumState {
    amplitudes: Vec<Complex64>,
}

impl QuantumState {
    /// Divides `raw` by its Euclidean norm.
    pub fn normalize(raw: &[Complex64]) -> Result<Self, StateError> {
        if raw.len() < 2 {
            return Err(StateError::TooFewStates(raw.len()));
        }
        // Scale first so that tiny or huge inputs do not under/overflow the sum of squares.
        let scale = raw.iter().map(|a| a.re.abs().max(a.im.abs())).fold(0.0, f64::max);
        if !(scale > 0.0) || !scale.is_finite() {
            return Err(StateError::AllZero);
        }
        let norm = scale
            * raw
                .iter()
                .map(|a| (a / scale).norm_sqr())
                .sum::<f64>()
                .sqrt();
        if norm < ZERO_NORM {
            return Err(StateError::AllZero);
        }
        Ok(Self { amplitudes: raw.iter().map(|a| a / norm).collect() })
    }

    /// State with real amplitudes √wᵢ, i.e. Born weights `weights`.
    pub fn from_weights(weights: &[f64]) -> Result<Self, StateError> {
        check_simplex(weights)?;
        let raw: Vec<Complex64> = weights.iter().map(|w| Complex64::new(w.sqrt(), 0.0)).collect();
        Self::normalize(&raw)
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amplitudes
    }

    pub fn dim(&self) -> usize {
        self.amplitudes.len()
    }

    /// Born weights |aᵢ|².
    pub fn weights(&self) -> Vec<f64> {
        self.amplitudes.iter().map(|a| a.norm_sqr()).collect()
    }
}

/// Parses semicolon-separated `re,im` pairs, e.g. `"0.6,0;0,0.8"`.
impl FromStr for QuantumState {
    type Err = StateError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut raw = Vec::new();
        for pair in s.split(';').map(str::trim).filter(|p| !p.is_empty()) {
            let mut parts = pair.split(',').map(str::trim);
            let (re, im) = match (parts.next(), parts.next(), parts.next()) {
                (Some(re), Some(im), None) => (re, im),
                _ => return Err(StateError::Parse(format!("expected \"re,im\", got {pair:?}"))),
            };
            let re: f64 = re.parse().map_err(|_| StateError::Parse(format!("bad real part {re:?}")))?;
            let im: f64 = im.parse().map_err(|_| StateError::Parse(format!("bad imaginary part {im:?}")))?;
            if !re.is_finite() || !im.is_finite() {
                return Err(StateError::Parse(format!("non-finite amplitude {pair:?}")));
            }
            raw.push(Complex64::new(re, im));
        }
        Self::normalize(&raw)
    }
}

impl fmt::Display for QuantumState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, a) in self.amplitudes.iter().enumerate() {
            if i > 0 {
                f.write_str(";")?;
            }
            write!(f, "{},{}", a.re, a.im)?;
        }
        Ok(())
    }
}

/// The coupled system-detector state: simplex weights wᵢ = |aᵢ|², spectator
/// cross terms κᵢⱼ, and the alive mask of states still in the game.
///
/// Cross terms are bookkeeping: they follow the weights (|κᵢⱼ| = √(wᵢwⱼ),
/// phase of the initial aᵢaⱼ*) but never influence the walk. Once a state is
/// eliminated its weight and every cross term touching it stay zero.
#[derive(Debug, Clone, PartialEq)]
pub struct JointState {
    weights: Vec<f64>,
    cross: Vec<Complex64>,
    phases: Vec<Complex64>,
    alive: Vec<bool>,
}

impl JointState {
    /// Couples `state` to its detector image.
    pub fn form(state: &QuantumState) -> Self {
        let a = state.amplitudes();
        let n = a.len();
        let mut cross = vec![Complex64::new(0.0, 0.0); n * n];
        let mut phases = vec![Complex64::new(1.0, 0.0); n * n];
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                let k = a[i] * a[j].conj();
                cross[i * n + j] = k;
                let mag = k.norm();
                if mag > 0.0 {
                    phases[i * n + j] = k / mag;
                }
            }
        }
        Self { weights: state.weights(), cross, phases, alive: vec![true; n] }
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn alive(&self) -> &[bool] {
        &self.alive
    }

    pub fn is_alive(&self, i: usize) -> bool {
        self.alive[i]
    }

    /// κᵢⱼ. The diagonal is unused and reads as zero.
    pub fn cross(&self, i: usize, j: usize) -> Complex64 {
        if i == j {
            Complex64::new(0.0, 0.0)
        } else {
            self.cross[i * self.dim() + j]
        }
    }

    /// Overwrites the weights (which must lie on the simplex) and refreshes
    /// the cross terms. A state whose weight is zero is eliminated for good;
    /// a dead state cannot be revived by a positive weight.
    pub fn set_weights(&mut self, weights: &[f64]) -> Result<(), StateError> {
        if weights.len() != self.dim() {
            return Err(StateError::DimensionMismatch { expected: self.dim(), got: weights.len() });
        }
        check_simplex(weights)?;
        if let Some(i) = (0..self.dim()).find(|&i| !self.alive[i] && weights[i] > 0.0) {
            return Err(StateError::Revived(i));
        }
        self.weights.copy_from_slice(weights);
        self.update_cross_terms();
        Ok(())
    }

    /// Loads weights kᵢ/M from an integer grid and refreshes the cross terms.
    pub(crate) fn set_grid(&mut self, grid: &[u64], resolution: u64) {
        let m = resolution as f64;
        for (w, &k) in self.weights.iter_mut().zip(grid) {
            *w = k as f64 / m;
        }
        self.update_cross_terms();
    }

    /// Re-derives every spectator term from the current weights: alive pairs
    /// get |κᵢⱼ| = √(wᵢwⱼ) with their initial phase, anything touching a dead
    /// state is zero. A zero weight kills its state permanently.
    pub fn update_cross_terms(&mut self) {
        let n = self.dim();
        for i in 0..n {
            if self.weights[i] == 0.0 {
                self.alive[i] = false;
            }
            if !self.alive[i] {
                self.weights[i] = 0.0;
            }
        }
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                let idx = i * n + j;
                self.cross[idx] = if self.alive[i] && self.alive[j] {
                    self.phases[idx] * (self.weights[i] * self.weights[j]).sqrt()
                } else {
                    Complex64::new(0.0, 0.0)
                };
            }
        }
    }
}

fn check_simplex(weights: &[f64]) -> Result<(), StateError> {
    if weights.len() < 2 {
        return Err(StateError::TooFewStates(weights.len()));
    }
    let sum: f64 = weights.iter().sum();
    if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) || (sum - 1.0).abs() > 1e-9 {
        return Err(StateError::NotOnSimplex { sum });
    }
    Ok(())
}
