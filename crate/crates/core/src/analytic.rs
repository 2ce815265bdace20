//! Closed-form results for the two-state walk seen as diffusion on [0, 1]
//! with absorbing walls.
//!
//! With c(x, 0) = δ(x − x₀), the Laplace transform of ∂c/∂t = D ∂²c/∂x² is
//! c̃″ − (s/D) c̃ = −δ(x − x₀)/D, c̃(0) = c̃(1) = 0, solved by
//!
//! ```text
//! c̃(x, s) = sinh(q·x<) sinh(q·(1 − x>)) / (√(sD) sinh q),   q = √(s/D)
//! ```
//!
//! The wall fluxes in the limit s → 0 are the absorption probabilities
//! (1 − x₀ at x = 0, x₀ at x = 1). The diffusion constant only sets the time
//! scale; it drops out of the absorption probabilities.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Laplace variable used for the s → 0 limit.
pub const FLUX_S: f64 = 1e-8;
/// Central-difference step for the wall derivatives.
pub const FLUX_H: f64 = 1e-6;
/// Largest allowed gap between numeric wall fluxes and the closed form.
pub const FLUX_TOLERANCE: f64 = 1e-4;

/// Beyond this value of q the log-space form replaces direct sinh products.
const DIRECT_LIMIT: f64 = 30.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnalyticError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("Green's function is not finite at x = {x}, s = {s}")]
    NumericOverflow { x: f64, s: f64 },
    #[error("numeric wall flux {numeric:?} disagrees with closed form {closed:?} (residual {residual:e})")]
    OracleMismatch { numeric: (f64, f64), closed: (f64, f64), residual: f64 },
}

/// Diffusion constant and start point of the two-state walk.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiffusionParams {
    d: f64,
    x0: f64,
}

impl DiffusionParams {
    pub fn new(d: f64, x0: f64) -> Result<Self, AnalyticError> {
        if !(d > 0.0) || !d.is_finite() {
            return Err(AnalyticError::InvalidArgument(format!("diffusion constant must be positive, got {d}")));
        }
        if !(x0 > 0.0 && x0 < 1.0) {
            return Err(AnalyticError::InvalidArgument(format!("x0 must lie in (0, 1), got {x0}")));
        }
        Ok(Self { d, x0 })
    }

    pub fn d(&self) -> f64 {
        self.d
    }

    pub fn x0(&self) -> f64 {
        self.x0
    }
}

/// ln sinh(u) − u for u ≥ 0.
fn ln_sinh_excess(u: f64) -> f64 {
    (-(-2.0 * u).exp_m1()).ln() - std::f64::consts::LN_2
}

/// The Green's-function formula without domain checks. Outside [0, 1] this is
/// the analytic continuation of each branch, which the central differences
/// at the walls rely on.
fn greens_raw(x: f64, s: f64, d: f64, x0: f64) -> f64 {
    let q = (s / d).sqrt();
    let lo = x.min(x0);
    let hi = x.max(x0);
    let prefactor = 1.0 / (s * d).sqrt();
    if q <= DIRECT_LIMIT {
        return prefactor * (q * lo).sinh() * (q * (1.0 - hi)).sinh() / q.sinh();
    }
    let (a, b) = (q * lo, q * (1.0 - hi));
    if a == 0.0 || b == 0.0 {
        return 0.0;
    }
    // sinh is odd; carry signs separately so the log stays real.
    let sign = a.signum() * b.signum();
    // a + b − q, formed without cancellation when x lies in [0, 1]
    let linear = if a >= 0.0 && b >= 0.0 { -q * (hi - lo) } else { a.abs() + b.abs() - q };
    let excess = ln_sinh_excess(a.abs()) + ln_sinh_excess(b.abs()) - ln_sinh_excess(q);
    sign * prefactor * (linear + excess).exp()
}

/// c̃(x, s) for start point `params.x0()`; exactly zero on both walls.
pub fn greens_tilde(x: f64, s: f64, params: &DiffusionParams) -> Result<f64, AnalyticError> {
    if !(0.0..=1.0).contains(&x) {
        return Err(AnalyticError::InvalidArgument(format!("x must lie in [0, 1], got {x}")));
    }
    if !(s > 0.0) {
        return Err(AnalyticError::InvalidArgument(format!("s must be positive, got {s}")));
    }
    if x == 0.0 || x == 1.0 {
        return Ok(0.0);
    }
    let value = greens_raw(x, s, params.d, params.x0);
    if !value.is_finite() {
        return Err(AnalyticError::NumericOverflow { x, s });
    }
    Ok(value)
}

/// Result of comparing numeric wall fluxes with the closed form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FluxCheck {
    /// (D·∂c̃/∂x at 0, −D·∂c̃/∂x at 1) at s = [`FLUX_S`], or `None` when the
    /// start point is within [`FLUX_H`] of a wall.
    pub numeric: Option<(f64, f64)>,
    pub closed: (f64, f64),
    pub residual: f64,
}

/// Numeric wall fluxes next to the closed form (1 − x₀, x₀).
pub fn flux_check(x0: f64) -> Result<FluxCheck, AnalyticError> {
    if !(0.0..=1.0).contains(&x0) {
        return Err(AnalyticError::InvalidArgument(format!("x0 must lie in [0, 1], got {x0}")));
    }
    let closed = (1.0 - x0, x0);
    // A walker starting on (or next to) a wall is already absorbed; the
    // stencil would straddle the source.
    if x0 <= FLUX_H || x0 >= 1.0 - FLUX_H {
        return Ok(FluxCheck { numeric: None, closed, residual: 0.0 });
    }
    // D cancels between c̃ ∝ 1/D and the D·∂/∂x prefactor; use D = 1.
    let d = 1.0;
    let derivative = |x: f64| {
        (greens_raw(x + FLUX_H, FLUX_S, d, x0) - greens_raw(x - FLUX_H, FLUX_S, d, x0)) / (2.0 * FLUX_H)
    };
    let p0 = d * derivative(0.0);
    let p1 = -d * derivative(1.0);
    let residual = (p0 - closed.0).abs().max((p1 - closed.1).abs());
    Ok(FluxCheck { numeric: Some((p0, p1)), closed, residual })
}

/// Probabilities of absorption at x = 0 and at x = 1 from start point `x0`.
///
/// The closed form is returned after the numeric flux self-test agrees with
/// it within [`FLUX_TOLERANCE`].
pub fn absorption_probs(x0: f64) -> Result<(f64, f64), AnalyticError> {
    let check = flux_check(x0)?;
    if let Some(numeric) = check.numeric {
        if !(check.residual <= FLUX_TOLERANCE) {
            return Err(AnalyticError::OracleMismatch { numeric, closed: check.closed, residual: check.residual });
        }
    }
    Ok(check.closed)
}

/// Mean time to absorption, x₀(1 − x₀)/(2D): the solution of
/// D·T″ = −1 with T(0) = T(1) = 0.
pub fn mean_exit_time(params: &DiffusionParams) -> f64 {
    params.x0 * (1.0 - params.x0) / (2.0 * params.d)
}
