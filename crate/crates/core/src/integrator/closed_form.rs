//! Hyperbolic geodesic arcs in closed form.

use crate::modular_group::UHPoint;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ArcShape {
    Vertical { x: f64 },
    Circle { center: f64, radius: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClosedFormArc {
    pub p: UHPoint,
    pub q: UHPoint,
    pub shape: ArcShape,
    pub length: f64,
}

fn circle_through(p: UHPoint, q: UHPoint) -> Option<(f64, f64)> {
    if p.x == q.x {
        return None;
    }
    let c = (q.norm_sqr() - p.norm_sqr()) / (2.0 * (q.x - p.x));
    Some((c, (p.x - c).hypot(p.y)))
}

/// The hyperbolic geodesic arc from `p` to `q`.
pub fn hyperbolic_closed_form(p: UHPoint, q: UHPoint) -> ClosedFormArc {
    let shape = match circle_through(p, q) {
        None => ArcShape::Vertical { x: p.x },
        Some((center, radius)) => ArcShape::Circle { center, radius },
    };
    ClosedFormArc { p, q, shape, length: crate::metrics::hyperbolic_distance(p, q) }
}

impl ClosedFormArc {
    /// Largest height attained on the arc.
    pub fn max_height(&self) -> f64 {
        match self.shape {
            ArcShape::Vertical { .. } => self.p.y.max(self.q.y),
            ArcShape::Circle { center, radius } => {
                if (self.p.x - center) * (self.q.x - center) <= 0.0 {
                    radius
                } else {
                    self.p.y.max(self.q.y)
                }
            }
        }
    }

    /// Point at hyperbolic arclength `s` from `p` towards `q`.
    pub fn point_at(&self, s: f64) -> UHPoint {
        match self.shape {
            ArcShape::Vertical { x } => {
                let sign = if self.q.y >= self.p.y { 1.0 } else { -1.0 };
                UHPoint { x, y: self.p.y * (sign * s).exp() }
            }
            ArcShape::Circle { center, radius } => {
                let theta_p = self.p.y.atan2(self.p.x - center);
                let sign = if self.q.x > self.p.x { -1.0 } else { 1.0 };
                let theta = 2.0 * ((0.5 * theta_p).tan() * (sign * s).exp()).atan();
                UHPoint { x: center + radius * theta.cos(), y: radius * theta.sin() }
            }
        }
    }

    /// Hyperbolic distance from `z` to the full geodesic carrying the arc.
    pub fn distance_to_geodesic(&self, z: UHPoint) -> f64 {
        match self.shape {
            ArcShape::Vertical { x } => ((z.x - x).abs() / z.y).asinh(),
            ArcShape::Circle { center, radius } => {
                let dx = z.x - center;
                ((dx * dx + z.y * z.y - radius * radius).abs() / (2.0 * radius * z.y)).asinh()
            }
        }
    }

    /// Direction angle of the arc at `p`.
    pub fn initial_angle(&self) -> f64 {
        direction_toward(self.p, self.q)
    }
}

/// Angle at `p` of the hyperbolic geodesic heading to `q`.
pub fn direction_toward(p: UHPoint, q: UHPoint) -> f64 {
    match circle_through(p, q) {
        None => {
            if q.y >= p.y {
                std::f64::consts::FRAC_PI_2
            } else {
                -std::f64::consts::FRAC_PI_2
            }
        }
        Some((c, _)) => tangent_angle(p, c, q.x > p.x),
    }
}

/// Angle at `p` of the hyperbolic geodesic ray ending at the boundary
/// point `xi` (`None` for the cusp at infinity).
pub fn direction_toward_boundary(p: UHPoint, xi: Option<f64>) -> f64 {
    match xi {
        None => std::f64::consts::FRAC_PI_2,
        Some(xi) if xi == p.x => -std::f64::consts::FRAC_PI_2,
        Some(xi) => {
            let c = (p.norm_sqr() - xi * xi) / (2.0 * (p.x - xi));
            tangent_angle(p, c, xi > p.x)
        }
    }
}

fn tangent_angle(p: UHPoint, center: f64, rightward: bool) -> f64 {
    if rightward {
        (center - p.x).atan2(p.y)
    } else {
        (p.x - center).atan2(-p.y)
    }
}
