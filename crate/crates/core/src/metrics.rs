//! Conformal metrics `F(z)|dz|` on the upper half-plane.
//!
//! * hyperbolic: `F = 1/y`
//! * WP model: `F = Im(z*)^{-1/2} / y`, where `z*` is the reduced
//!   representative of `z`. On the fundamental domain this is exactly
//!   `y^{-3/2}`, and the factor is PSL(2,Z)-equivariant everywhere.

use crate::modular_group::{reduce, FloatMobius, GroupError, Lift, UHPoint};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

/// Height above which the WP model form holds verbatim.
pub const CUSP_FLOOR: f64 = 1.0;

pub const DEFAULT_HOROBALL_HEIGHT: f64 = 1.1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("horocycle parameter B = {0} outside (0, sqrt(2 pi))")]
    HorocycleOutOfRange(f64),
    #[error("horoball height {0} must exceed the cusp floor 1")]
    HeightTooLow(f64),
    #[error(transparent)]
    Group(#[from] GroupError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MetricId {
    #[serde(rename = "hyp")]
    Hyperbolic,
    #[serde(rename = "wp")]
    WpModel,
}

impl MetricId {
    /// `k` such that the factor is `y^{-k/2}` on the fundamental domain.
    pub fn exponent(&self) -> f64 {
        match self {
            MetricId::Hyperbolic => 2.0,
            MetricId::WpModel => 3.0,
        }
    }

    pub fn tag(&self) -> &'static str {
        match self {
            MetricId::Hyperbolic => "hyp",
            MetricId::WpModel => "wp",
        }
    }
}

impl fmt::Display for MetricId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for MetricId {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "hyp" | "hyperbolic" => Ok(MetricId::Hyperbolic),
            "wp" | "wp_model" => Ok(MetricId::WpModel),
            other => Err(format!("unknown metric '{other}' (expected hyp or wp)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricParams {
    pub horoball_height: f64,
}

impl MetricParams {
    pub fn new(horoball_height: f64) -> Result<Self, MetricError> {
        if !(horoball_height > CUSP_FLOOR) {
            return Err(MetricError::HeightTooLow(horoball_height));
        }
        Ok(Self { horoball_height })
    }
}

impl Default for MetricParams {
    fn default() -> Self {
        Self { horoball_height: DEFAULT_HOROBALL_HEIGHT }
    }
}

pub fn conformal_factor(m: MetricId, z: UHPoint) -> Result<f64, GroupError> {
    match m {
        MetricId::Hyperbolic => Ok(1.0 / z.y),
        MetricId::WpModel => {
            let (w, _) = reduce(z)?;
            Ok(1.0 / (w.y.sqrt() * z.y))
        }
    }
}

/// Factor of the model form on the fundamental domain (and its translates).
pub fn chart_factor(m: MetricId, z: UHPoint) -> f64 {
    z.y.powf(-m.exponent() / 2.0)
}

/// First-order WP distance to the cusp for a point of the given invariant
/// height.
pub fn delta_from_height(height: f64) -> f64 {
    (2.0 * PI / height).sqrt()
}

pub fn delta_to_cusp(z: UHPoint) -> Result<f64, GroupError> {
    Ok(delta_from_height(reduce(z)?.0.y))
}

/// Height of the WP horocycle `{δ = B}`.
pub fn wp_horocycle_height(b: f64) -> Result<f64, MetricError> {
    if !(b > 0.0 && b < (2.0 * PI).sqrt()) {
        return Err(MetricError::HorocycleOutOfRange(b));
    }
    Ok(2.0 * PI / (b * b))
}

/// Geodesic acceleration for the model factor `y^{-k/2}`; state is
/// `(x, y, x', y')`.
#[inline]
pub fn chart_rhs(k: f64, s: &[f64; 4]) -> [f64; 4] {
    let [_, y, vx, vy] = *s;
    [vx, vy, k / y * vx * vy, k / (2.0 * y) * (vy * vy - vx * vx)]
}

/// Geodesic acceleration in global coordinates for either metric.
///
/// For the WP model the gradient of `ln F` is taken from the reducing
/// element at `z`, so the result is the one-sided derivative on the cut
/// locus of the reduction.
pub fn geodesic_rhs(m: MetricId, s: &[f64; 4]) -> Result<[f64; 4], GroupError> {
    let [x, y, vx, vy] = *s;
    let (phi_x, phi_y) = match m {
        MetricId::Hyperbolic => (0.0, -1.0 / y),
        MetricId::WpModel => {
            let (_, g) = reduce(UHPoint { x, y })?;
            let (c, d) = (g.c as f64, g.d as f64);
            let den = (c * x + d).powi(2) + (c * y).powi(2);
            (c * (c * x + d) / den, -1.5 / y + c * c * y / den)
        }
    };
    let ax = -(phi_x * (vx * vx - vy * vy) + 2.0 * phi_y * vx * vy);
    let ay = -(phi_y * (vy * vy - vx * vx) + 2.0 * phi_x * vx * vy);
    Ok([vx, vy, ax, ay])
}

/// Metric speed `F(z)|v|`.
pub fn speed(m: MetricId, z: UHPoint, v: (f64, f64)) -> Result<f64, GroupError> {
    Ok(conformal_factor(m, z)? * v.0.hypot(v.1))
}

pub fn hyperbolic_distance(a: UHPoint, b: UHPoint) -> f64 {
    let e = (a.x - b.x).hypot(a.y - b.y);
    2.0 * (e / (2.0 * (a.y * b.y).sqrt())).asinh()
}

/// Hyperbolic distance between two lifts, exact in the relative chart when
/// the integer arithmetic fits and through logarithms otherwise.
pub fn lift_distance(a: &Lift, b: &Lift) -> f64 {
    match b.in_chart(&a.chart) {
        Ok(bb) if bb.y > 1e-250 => hyperbolic_distance(a.local, bb),
        _ => {
            let rel = FloatMobius::from_exact(&a.chart).compose(&inverse_float(&b.chart));
            far_distance(a.local, &rel, b.local)
        }
    }
}

fn inverse_float(g: &crate::modular_group::GroupElement) -> FloatMobius {
    FloatMobius::from_exact(&g.inverse())
}

/// Distance from `p` to `rel·w` when `rel·w` may sit far below `f64`
/// resolution; uses `cosh d = 1 + |p - q|^2 / (2 Im p Im q)`.
pub fn far_distance(p: UHPoint, rel: &FloatMobius, w: UHPoint) -> f64 {
    let q = rel.apply(w);
    let log_iq = rel.log_im(w);
    if log_iq > -600.0 && q.y > 0.0 && q.y.is_finite() {
        return hyperbolic_distance(p, UHPoint { x: q.x, y: log_iq.exp() });
    }
    // |p - q|^2 ~ (p.x - q.x)^2 + p.y^2 once Im q is negligible
    let num = (p.x - q.x).powi(2) + p.y * p.y;
    // d = acosh(X) ~ ln(2X) for large X
    (num / (p.y)).ln() - log_iq
}
