//! Bell-test correlation laboratory.
//!
//! Four correlation models are provided for detector settings **a**, **b**
//! and a hidden unit vector λ distributed uniformly over the sphere
//! (ρ(λ) = 1 with measure dΩ, total mass 4π):
//!
//! * `quantum`: the singlet reference C(a, b) = −a·b.
//! * `bell-sign`: Bell's deterministic model, E^A = sign(a·λ),
//!   E^B = −sign(b·λ), whose correlation is −1 + 2θ/π.
//! * `image-analytic` / `image-event`: the detector-image model, where each
//!   detector carries a local variable μ ∈ {0, ±1} with densities
//!   ρ(λ, μ=0, a) = c₁|a·λ| and ρ(λ, μ=±1, a) = c₂, and outcomes
//!   E = sign(a·λ) for μ = 0, E = μ otherwise. The μ = ±1 branches cancel in
//!   the mean and the μ = 0 branch gives c₁²∫(a·λ)(b·λ)dΩ = cos θ with
//!   c₁ = √(3/4π). The constant c₂ comes from normalising the joint density,
//!   ∫[4c₂² + 4c₁c₂|a·λ| + c₁²|a·λ||b·λ|]dΩ = 1, and therefore depends on the
//!   angle between the two settings.
//!
//! The image model as written correlates (+cos θ) where the singlet
//! anticorrelates; [`Convention`] selects the sign.

mod inequality;

pub use inequality::{bell64, chsh, Bell64Result, ChshResult, InequalityReport};

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use nalgebra::Vector3;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::quadrature::{sphere_integral, NoConvergence, SphereFrame};
use crate::rng::{stream_id, stream_rng};

/// Samples per independent random stream.
const SAMPLE_CHUNK: u64 = 1 << 16;
/// Refinement tolerance for sphere integrals.
pub const QUADRATURE_TOLERANCE: f64 = 1e-8;
/// Largest normalisation residual accepted from [`solve_c2`].
pub const NORMALIZATION_TOLERANCE: f64 = 1e-8;
/// Below this acceptance rate the event sampler gives up.
pub const MIN_ACCEPTANCE: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BellError {
    #[error("setting must be a non-zero finite vector")]
    ZeroVector,
    #[error("angle {0} is outside [0, π]")]
    AngleOutOfRange(f64),
    #[error("sample count must be at least 1")]
    NoSamples,
    #[error(transparent)]
    NoConvergence(#[from] NoConvergence),
    #[error("c₂ normalisation has no real root (discriminant {0:e})")]
    NoRealRoot(f64),
    #[error("c₂ root {0:e} is negative")]
    NegativeRoot(f64),
    #[error("c₂ normalisation residual {0:e} exceeds tolerance")]
    Normalization(f64),
    #[error("rejection sampler stalled: {accepted} of {proposals} proposals accepted")]
    RejectionStall { accepted: u64, proposals: u64 },
    #[error("unknown {kind} {value:?}")]
    Unknown { kind: &'static str, value: String },
}

/// c₁ = √(3/(4π)).
pub fn c1() -> f64 {
    (3.0 / (4.0 * PI)).sqrt()
}

fn unit(v: Vector3<f64>) -> Result<Vector3<f64>, BellError> {
    let n = v.norm();
    if !(n > 0.0) || !n.is_finite() {
        return Err(BellError::ZeroVector);
    }
    Ok(v / n)
}

/// Measurement direction of a detector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorSetting(Vector3<f64>);

impl DetectorSetting {
    /// Normalises `v`.
    pub fn new(v: Vector3<f64>) -> Result<Self, BellError> {
        unit(v).map(Self)
    }

    /// Direction at `degrees` from the z axis, in the x-z plane.
    pub fn coplanar_degrees(degrees: f64) -> Self {
        let t = degrees.to_radians();
        Self(Vector3::new(t.sin(), 0.0, t.cos()))
    }

    pub fn direction(&self) -> &Vector3<f64> {
        &self.0
    }

    /// Angle to `other` in [0, π].
    pub fn angle_to(&self, other: &DetectorSetting) -> f64 {
        // atan2 of |a×b| and a·b stays accurate near 0 and π
        self.0.cross(&other.0).norm().atan2(self.0.dot(&other.0))
    }
}

/// Shared hidden variable λ, a unit vector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HiddenVector(Vector3<f64>);

impl HiddenVector {
    pub fn new(v: Vector3<f64>) -> Result<Self, BellError> {
        unit(v).map(Self)
    }

    pub fn vector(&self) -> &Vector3<f64> {
        &self.0
    }
}

/// Detector-local hidden variable μ ∈ {0, +1, −1}.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MuBranch {
    Zero,
    Plus,
    Minus,
}

impl MuBranch {
    pub fn value(self) -> i8 {
        match self {
            MuBranch::Zero => 0,
            MuBranch::Plus => 1,
            MuBranch::Minus => -1,
        }
    }

    /// Detector outcome: sign(setting·λ) on the μ = 0 branch, μ otherwise.
    pub fn outcome(self, projection: f64) -> f64 {
        match self {
            MuBranch::Zero => projection.signum(),
            MuBranch::Plus => 1.0,
            MuBranch::Minus => -1.0,
        }
    }
}

/// Uniform direction on S²: cos ϑ uniform in [−1, 1], φ uniform in [0, 2π).
pub fn sample_lambda<R: Rng + ?Sized>(rng: &mut R) -> HiddenVector {
    let u: f64 = rng.random_range(-1.0..=1.0);
    let phi: f64 = rng.random_range(0.0..2.0 * PI);
    let r = (1.0 - u * u).max(0.0).sqrt();
    let (s, c) = phi.sin_cos();
    HiddenVector(Vector3::new(r * c, r * s, u))
}

/// Sign of the image-model correlation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Convention {
    /// As the model is defined: C = +cos θ, perfect correlation at θ = 0.
    #[default]
    Image,
    /// Constants sign-flipped to match the singlet: C = −cos θ.
    Quantum,
}

impl Convention {
    pub fn sign(self) -> f64 {
        match self {
            Convention::Image => 1.0,
            Convention::Quantum => -1.0,
        }
    }
}

impl FromStr for Convention {
    type Err = BellError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "image" => Ok(Self::Image),
            "quantum" => Ok(Self::Quantum),
            _ => Err(BellError::Unknown { kind: "convention", value: s.into() }),
        }
    }
}

impl fmt::Display for Convention {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Convention::Image => "image",
            Convention::Quantum => "quantum",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelTag {
    Quantum,
    BellSign,
    ImageAnalytic,
    ImageEvent,
}

impl ModelTag {
    pub const ALL: [ModelTag; 4] = [ModelTag::Quantum, ModelTag::BellSign, ModelTag::ImageAnalytic, ModelTag::ImageEvent];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelTag::Quantum => "quantum",
            ModelTag::BellSign => "bell-sign",
            ModelTag::ImageAnalytic => "image-analytic",
            ModelTag::ImageEvent => "image-event",
        }
    }
}

impl fmt::Display for ModelTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelTag {
    type Err = BellError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| BellError::Unknown { kind: "model", value: s.into() })
    }
}

/// How the image model's analytic correlation integral is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QuadratureMethod {
    #[default]
    Quadrature,
    Mc,
}

impl FromStr for QuadratureMethod {
    type Err = BellError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "quadrature" => Ok(Self::Quadrature),
            "mc" => Ok(Self::Mc),
            _ => Err(BellError::Unknown { kind: "method", value: s.into() }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrelationEstimate {
    pub value: f64,
    /// Zero for deterministic evaluations.
    pub stderr: f64,
    /// Samples behind the estimate; zero for deterministic evaluations.
    pub n: u64,
    pub model: ModelTag,
}

/// Image-model constants for one pair of settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConstants {
    pub c1: f64,
    pub c2: f64,
    /// Angle between the settings, radians.
    pub theta: f64,
    /// I(θ) = ∫|a·λ||b·λ| dΩ by quadrature.
    pub overlap: f64,
    /// |∫ normalisation density dΩ − 1| with the overlap term taken from the
    /// closed form rather than the quadrature.
    pub residual: f64,
}

/// Closed form of I(θ) = ∫|a·λ||b·λ| dΩ = (4/3)(2 sin θ + (π − 2θ) cos θ).
///
/// With the polar axis along a × b the integrand separates into
/// (1 − u²)·|cos φ cos(φ − θ)|, whose factors integrate to 4/3 and
/// 2 sin θ + (π − 2θ) cos θ.
pub fn overlap_closed_form(theta: f64) -> f64 {
    4.0 / 3.0 * (2.0 * theta.sin() + (PI - 2.0 * theta) * theta.cos())
}

fn check_angle(theta: f64) -> Result<(), BellError> {
    if !(0.0..=PI).contains(&theta) {
        return Err(BellError::AngleOutOfRange(theta));
    }
    Ok(())
}

/// I(θ) = ∫_{S²} |a·λ||b·λ| dΩ by refined product quadrature.
pub fn overlap_integral(theta: f64) -> Result<f64, BellError> {
    check_angle(theta)?;
    let a = Vector3::z();
    let b = Vector3::new(theta.sin(), 0.0, theta.cos());
    let frame = SphereFrame::spanning(&a, &b);
    let (value, _) = sphere_integral(&frame, QUADRATURE_TOLERANCE, |l| a.dot(l).abs() * b.dot(l).abs())?;
    Ok(value)
}

/// Solves 16π c₂² + 8π c₁ c₂ + c₁² I(θ) − 1 = 0 for its largest root.
pub fn solve_c2(theta: f64) -> Result<ModelConstants, BellError> {
    let c1 = c1();
    let overlap = overlap_integral(theta)?;
    let (qa, qb, qc) = (16.0 * PI, 8.0 * PI * c1, c1 * c1 * overlap - 1.0);
    let disc = qb * qb - 4.0 * qa * qc;
    if disc < -1e-12 {
        return Err(BellError::NoRealRoot(disc));
    }
    // −2c / (b + √disc) avoids cancellation when c ≈ 0
    let mut c2 = -2.0 * qc / (qb + disc.max(0.0).sqrt());
    if c2 < -1e-10 {
        return Err(BellError::NegativeRoot(c2));
    }
    if c2 <= 1e-10 {
        c2 = 0.0;
    }
    let residual =
        (16.0 * PI * c2 * c2 + 8.0 * PI * c1 * c2 + c1 * c1 * overlap_closed_form(theta) - 1.0).abs();
    if !(residual <= NORMALIZATION_TOLERANCE) {
        return Err(BellError::Normalization(residual));
    }
    Ok(ModelConstants { c1, c2, theta, overlap, residual })
}

/// Singlet correlation −a·b.
pub fn quantum_correlation(a: &DetectorSetting, b: &DetectorSetting) -> f64 {
    -a.0.dot(&b.0)
}

/// Running sums over one or more sampling chunks.
#[derive(Debug, Clone, Copy, Default)]
struct Moments {
    n: u64,
    sum: f64,
    sum_sq: f64,
    proposals: u64,
    mu_zero: u64,
    spectator_sum: f64,
    spectator_sq: f64,
}

impl Moments {
    fn push(&mut self, x: f64) {
        self.n += 1;
        self.sum += x;
        self.sum_sq += x * x;
    }

    fn merge(mut self, o: Moments) -> Moments {
        self.n += o.n;
        self.sum += o.sum;
        self.sum_sq += o.sum_sq;
        self.proposals += o.proposals;
        self.mu_zero += o.mu_zero;
        self.spectator_sum += o.spectator_sum;
        self.spectator_sq += o.spectator_sq;
        self
    }

    fn mean_and_stderr(n: u64, sum: f64, sum_sq: f64) -> (f64, f64) {
        let nf = n as f64;
        let mean = sum / nf;
        if n < 2 {
            return (mean, 0.0);
        }
        let var = ((sum_sq - nf * mean * mean) / (nf - 1.0)).max(0.0);
        (mean, (var / nf).sqrt())
    }
}

/// Splits `n` samples into fixed chunks, each on its own stream of
/// (`seed`, `family`), and merges chunk sums in chunk order.
fn sample_chunks<F>(n: u64, seed: u64, family: u32, chunk: F) -> Result<Moments, BellError>
where
    F: Fn(&mut ChaCha8Rng, u64) -> Result<Moments, BellError> + Sync,
{
    if n == 0 {
        return Err(BellError::NoSamples);
    }
    let chunks = n.div_ceil(SAMPLE_CHUNK);
    let parts: Vec<Result<Moments, BellError>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let count = SAMPLE_CHUNK.min(n - c * SAMPLE_CHUNK);
            let mut rng = stream_rng(seed, stream_id(family, c as u32));
            chunk(&mut rng, count)
        })
        .collect();
    parts.into_iter().try_fold(Moments::default(), |acc, p| Ok(acc.merge(p?)))
}

/// λ with both projections non-zero; the measure-zero ties are redrawn.
fn sample_projections(rng: &mut ChaCha8Rng, a: &Vector3<f64>, b: &Vector3<f64>) -> (f64, f64) {
    loop {
        let l = sample_lambda(rng);
        let (da, db) = (a.dot(&l.0), b.dot(&l.0));
        if da != 0.0 && db != 0.0 {
            return (da, db);
        }
    }
}

/// Bell's sign model: mean of sign(a·λ)·(−sign(b·λ)) over `n` samples.
pub fn bell_sign_correlation(
    a: &DetectorSetting,
    b: &DetectorSetting,
    n: u64,
    seed: u64,
    family: u32,
) -> Result<CorrelationEstimate, BellError> {
    let m = sample_chunks(n, seed, family, |rng, count| {
        let mut m = Moments::default();
        for _ in 0..count {
            let (da, db) = sample_projections(rng, &a.0, &b.0);
            m.push(da.signum() * -db.signum());
        }
        Ok(m)
    })?;
    let (value, stderr) = Moments::mean_and_stderr(m.n, m.sum, m.sum_sq);
    Ok(CorrelationEstimate { value, stderr, n: m.n, model: ModelTag::BellSign })
}

/// c₁²∫(a·λ)(b·λ) dΩ, by quadrature (exact to 1e-8, stderr 0) or as the mean
/// of 4π c₁² (a·λ)(b·λ) over `n` uniform λ. The convention sign is applied.
pub fn image_correlation_analytic(
    a: &DetectorSetting,
    b: &DetectorSetting,
    method: QuadratureMethod,
    convention: Convention,
    n: u64,
    seed: u64,
    family: u32,
) -> Result<CorrelationEstimate, BellError> {
    let c1sq = c1() * c1();
    let sign = convention.sign();
    match method {
        QuadratureMethod::Quadrature => {
            let frame = SphereFrame::spanning(&a.0, &b.0);
            let (integral, _) = sphere_integral(&frame, QUADRATURE_TOLERANCE, |l| a.0.dot(l) * b.0.dot(l))?;
            Ok(CorrelationEstimate { value: sign * c1sq * integral, stderr: 0.0, n: 0, model: ModelTag::ImageAnalytic })
        }
        QuadratureMethod::Mc => {
            let weight = 4.0 * PI * c1sq;
            let m = sample_chunks(n, seed, family, |rng, count| {
                let mut m = Moments::default();
                for _ in 0..count {
                    let l = sample_lambda(rng);
                    m.push(weight * a.0.dot(&l.0) * b.0.dot(&l.0));
                }
                Ok(m)
            })?;
            let (value, stderr) = Moments::mean_and_stderr(m.n, m.sum, m.sum_sq);
            Ok(CorrelationEstimate { value: sign * value, stderr, n: m.n, model: ModelTag::ImageAnalytic })
        }
    }
}

/// Diagnostics of an event-level run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EventDiagnostics {
    pub constants: ModelConstants,
    pub proposals: u64,
    pub acceptance_rate: f64,
    /// Fraction of events with μ^A = μ^B = 0.
    pub mu_zero_fraction: f64,
    /// Contribution of events with μ^A ≠ 0 or μ^B ≠ 0 to the mean product,
    /// i.e. their summed E^A·E^B divided by the event count. Tends to 0.
    pub spectator_mean: f64,
    pub spectator_stderr: f64,
}

/// Event-level local simulation of the image model.
///
/// λ is drawn from the joint density by rejection against the envelope
/// (2c₂ + c₁)²; each detector then draws its own μ from its local density
/// (μ = 0 with probability c₁|s·λ|/(2c₂ + c₁|s·λ|), else ±1 evenly) and
/// reports its outcome without reference to the other side.
pub fn image_correlation_event(
    a: &DetectorSetting,
    b: &DetectorSetting,
    convention: Convention,
    n: u64,
    seed: u64,
    family: u32,
) -> Result<(CorrelationEstimate, EventDiagnostics), BellError> {
    let constants = solve_c2(a.angle_to(b))?;
    let (c1, c2) = (constants.c1, constants.c2);
    let envelope = (2.0 * c2 + c1).powi(2);
    let draw_mu = |rng: &mut ChaCha8Rng, projection: f64| {
        let local = c1 * projection.abs();
        if rng.random::<f64>() * (2.0 * c2 + local) < local {
            MuBranch::Zero
        } else if rng.random::<bool>() {
            MuBranch::Plus
        } else {
            MuBranch::Minus
        }
    };
    let m = sample_chunks(n, seed, family, |rng, count| {
        let mut m = Moments::default();
        while m.n < count {
            let (da, db) = sample_projections(rng, &a.0, &b.0);
            m.proposals += 1;
            let weight = (2.0 * c2 + c1 * da.abs()) * (2.0 * c2 + c1 * db.abs());
            if rng.random::<f64>() * envelope >= weight {
                if m.proposals >= 10_000 && (m.n as f64) < MIN_ACCEPTANCE * m.proposals as f64 {
                    return Err(BellError::RejectionStall { accepted: m.n, proposals: m.proposals });
                }
                continue;
            }
            let (mu_a, mu_b) = (draw_mu(rng, da), draw_mu(rng, db));
            let product = mu_a.outcome(da) * mu_b.outcome(db);
            m.push(product);
            if mu_a == MuBranch::Zero && mu_b == MuBranch::Zero {
                m.mu_zero += 1;
            } else {
                m.spectator_sum += product;
                m.spectator_sq += product * product;
            }
        }
        Ok(m)
    })?;
    let (value, stderr) = Moments::mean_and_stderr(m.n, m.sum, m.sum_sq);
    let (spectator_mean, spectator_stderr) = Moments::mean_and_stderr(m.n, m.spectator_sum, m.spectator_sq);
    let sign = convention.sign();
    Ok((
        CorrelationEstimate { value: sign * value, stderr, n: m.n, model: ModelTag::ImageEvent },
        EventDiagnostics {
            constants,
            proposals: m.proposals,
            acceptance_rate: m.n as f64 / m.proposals as f64,
            mu_zero_fraction: m.mu_zero as f64 / m.n as f64,
            spectator_mean: sign * spectator_mean,
            spectator_stderr,
        },
    ))
}

/// One correlation model together with its sampling budget.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimator {
    pub model: ModelTag,
    /// Samples (or accepted events) per correlation.
    pub samples: u64,
    pub seed: u64,
    /// Sign convention of the image models; ignored by the others.
    pub convention: Convention,
    /// Evaluation path of `image-analytic`.
    pub method: QuadratureMethod,
}

impl Estimator {
    pub fn new(model: ModelTag, samples: u64, seed: u64) -> Self {
        Self { model, samples, seed, convention: Convention::default(), method: QuadratureMethod::default() }
    }

    pub fn with_convention(self, convention: Convention) -> Self {
        Self { convention, ..self }
    }

    pub fn with_method(self, method: QuadratureMethod) -> Self {
        Self { method, ..self }
    }

    /// +1 when the model reports C(s, s) = +1, −1 when it anticorrelates.
    pub fn same_setting_sign(&self) -> f64 {
        match self.model {
            ModelTag::Quantum | ModelTag::BellSign => -1.0,
            ModelTag::ImageAnalytic | ModelTag::ImageEvent => self.convention.sign(),
        }
    }

    /// C(a, b); `family` picks independent random streams for each call
    /// sharing this estimator's seed.
    pub fn correlate(&self, a: &DetectorSetting, b: &DetectorSetting, family: u32) -> Result<CorrelationEstimate, BellError> {
        match self.model {
            ModelTag::Quantum => {
                Ok(CorrelationEstimate { value: quantum_correlation(a, b), stderr: 0.0, n: 0, model: ModelTag::Quantum })
            }
            ModelTag::BellSign => bell_sign_correlation(a, b, self.samples, self.seed, family),
            ModelTag::ImageAnalytic => {
                image_correlation_analytic(a, b, self.method, self.convention, self.samples, self.seed, family)
            }
            ModelTag::ImageEvent => {
                image_correlation_event(a, b, self.convention, self.samples, self.seed, family).map(|(e, _)| e)
            }
        }
    }
}

#[cfg(test)]
mod tests;
