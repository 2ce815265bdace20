//! Gauss-Legendre rules and a product rule on the unit sphere.
//!
//! The sphere rule integrates in (u, φ) about a chosen polar axis, with
//! u = cos ϑ on Gauss-Legendre nodes:
//!
//! ```text
//! ∫_{S²} f dΩ = ∫_{-1}^{1} du ∫_0^{2π} dφ f(√(1−u²)(cos φ e₁ + sin φ e₂) + u n)
//! ```
//!
//! Integrands of the form g(a·λ, b·λ) are best integrated with the polar axis
//! along a × b: both projections are then √(1−u²) times a trigonometric
//! function of φ, and their zeros sit at fixed azimuths. The φ integral is a
//! periodic trapezoid when the frame has no such breakpoints and a
//! Gauss-Legendre rule on each arc between breakpoints otherwise, so kinks
//! like |a·λ| do not slow convergence.

use std::f64::consts::PI;

use nalgebra::Vector3;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
#[error("sphere quadrature did not reach {tolerance:e} within {levels} refinements (last change {last_change:e})")]
pub struct NoConvergence {
    pub tolerance: f64,
    pub levels: u32,
    pub last_change: f64,
}

/// Gauss-Legendre nodes and weights on [-1, 1].
pub fn gauss_legendre(n: usize) -> Vec<(f64, f64)> {
    assert!(n >= 1, "need at least one node");
    let mut out = vec![(0.0, 0.0); n];
    let m = n.div_ceil(2);
    for i in 0..m {
        // Tricomi's initial guess, then Newton on P_n.
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, x);
        dp = if d != 0.0 { d } else { dp };
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        out[i] = (-x, w);
        out[n - 1 - i] = (x, w);
    }
    out
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    for k in 2..=n {
        let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
        p0 = p1;
        p1 = p2;
    }
    if n == 0 {
        return (1.0, 0.0);
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Orthonormal frame (e₁, e₂, n) with polar axis n, plus the azimuths in
/// [0, 2π) where the integrand may have kinks.
#[derive(Debug, Clone, PartialEq)]
pub struct SphereFrame {
    pub e1: Vector3<f64>,
    pub e2: Vector3<f64>,
    pub axis: Vector3<f64>,
    pub breaks: Vec<f64>,
}

impl SphereFrame {
    /// Frame about `axis` with no breakpoints.
    pub fn about(axis: &Vector3<f64>) -> Self {
        let axis = axis.normalize();
        let helper = if axis.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
        let e1 = axis.cross(&helper).normalize();
        let e2 = axis.cross(&e1);
        Self { e1, e2, axis, breaks: Vec::new() }
    }

    /// Frame whose polar axis is normal to both `a` and `b`, with e₁ = â and
    /// breakpoints where a·λ or b·λ changes sign. For (anti)parallel inputs
    /// any axis normal to `a` is used.
    pub fn spanning(a: &Vector3<f64>, b: &Vector3<f64>) -> Self {
        let e1 = a.normalize();
        let mut axis = e1.cross(b);
        if axis.norm() < 1e-12 {
            let helper = if e1.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
            axis = e1.cross(&helper);
        }
        let axis = axis.normalize();
        let e2 = axis.cross(&e1);
        let mut breaks = Vec::with_capacity(4);
        for v in [a, b] {
            // v·λ ∝ cos(φ − φᵥ) on every ring
            let phi_v = v.dot(&e2).atan2(v.dot(&e1));
            for offset in [0.5 * PI, 1.5 * PI] {
                breaks.push((phi_v + offset).rem_euclid(2.0 * PI));
            }
        }
        breaks.sort_by(f64::total_cmp);
        breaks.dedup_by(|x, y| (*x - *y).abs() < 1e-14);
        if breaks.len() > 1 && breaks[0] + 2.0 * PI - breaks[breaks.len() - 1] < 1e-14 {
            breaks.pop();
        }
        Self { e1, e2, axis, breaks }
    }

    pub fn point(&self, u: f64, phi: f64) -> Vector3<f64> {
        let r = (1.0 - u * u).max(0.0).sqrt();
        self.e1 * (r * phi.cos()) + self.e2 * (r * phi.sin()) + self.axis * u
    }

    /// Azimuth nodes and weights: `n` trapezoid points without breakpoints,
    /// `n` Gauss-Legendre nodes per arc with them.
    fn azimuth_rule(&self, n: usize) -> Vec<(f64, f64)> {
        if self.breaks.is_empty() {
            let h = 2.0 * PI / n as f64;
            return (0..n).map(|j| (j as f64 * h, h)).collect();
        }
        let gl = gauss_legendre(n);
        let k = self.breaks.len();
        let mut rule = Vec::with_capacity(n * k);
        for i in 0..k {
            let lo = self.breaks[i];
            let hi = if i + 1 < k { self.breaks[i + 1] } else { self.breaks[0] + 2.0 * PI };
            let (mid, half) = (0.5 * (lo + hi), 0.5 * (hi - lo));
            rule.extend(gl.iter().map(|&(x, w)| (mid + half * x, half * w)));
        }
        rule
    }
}

/// Product rule with `nodes_u` Gauss-Legendre nodes in u and `nodes_phi`
/// azimuth nodes (per arc when the frame has breakpoints).
pub fn sphere_product(frame: &SphereFrame, nodes_u: usize, nodes_phi: usize, f: impl Fn(&Vector3<f64>) -> f64) -> f64 {
    let gl = gauss_legendre(nodes_u);
    let ring: Vec<(f64, f64, f64)> = frame
        .azimuth_rule(nodes_phi)
        .into_iter()
        .map(|(phi, w)| {
            let (s, c) = phi.sin_cos();
            (s, c, w)
        })
        .collect();
    let mut total = 0.0;
    for &(u, wu) in &gl {
        let r = (1.0 - u * u).max(0.0).sqrt();
        let sum: f64 = ring
            .iter()
            .map(|&(s, c, w)| w * f(&(frame.e1 * (r * c) + frame.e2 * (r * s) + frame.axis * u)))
            .sum();
        total += wu * sum;
    }
    total
}

/// Refinement schedule of [`sphere_integral`]: level k uses 4 + 2k nodes in
/// u and either 8·2^k trapezoid points or 4 + 2k nodes per arc in φ.
pub const MAX_LEVELS: u32 = 16;

fn level_nodes(frame: &SphereFrame, level: u32) -> (usize, usize) {
    let u = 4 + 2 * level as usize;
    let phi = if frame.breaks.is_empty() { 8 << level } else { u };
    (u, phi)
}

/// Integral over the unit sphere, refining until two successive levels
/// differ by less than `tolerance`. Returns the value and the level reached.
pub fn sphere_integral(
    frame: &SphereFrame,
    tolerance: f64,
    f: impl Fn(&Vector3<f64>) -> f64,
) -> Result<(f64, u32), NoConvergence> {
    let (nu, nphi) = level_nodes(frame, 0);
    let mut previous = sphere_product(frame, nu, nphi, &f);
    let mut last_change = f64::INFINITY;
    for level in 1..=MAX_LEVELS {
        let (nu, nphi) = level_nodes(frame, level);
        let current = sphere_product(frame, nu, nphi, &f);
        last_change = (current - previous).abs();
        if last_change < tolerance {
            return Ok((current, level));
        }
        previous = current;
    }
    Err(NoConvergence { tolerance, levels: MAX_LEVELS, last_change })
}
