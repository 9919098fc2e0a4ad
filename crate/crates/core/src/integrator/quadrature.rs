//! Closed quadrature of a WP excursion in the cusp chart.
//!
//! With conserved momentum `p_x = x'/y³` and unit speed,
//! `dx/dy = p_x y^{3/2} / √(1 - p_x² y³)`. Substituting
//! `y = y_max (1 - τ²)` removes the endpoint singularity.

use super::IntegrationError;
use serde::{Deserialize, Serialize};

const GL_NODES: [f64; 5] = [-0.906_179_845_938_664, -0.538_469_310_105_683, 0.0, 0.538_469_310_105_683, 0.906_179_845_938_664];
const GL_WEIGHTS: [f64; 5] = [0.236_926_885_056_189, 0.478_628_670_499_366, 0.568_888_888_888_889, 0.478_628_670_499_366, 0.236_926_885_056_189];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExcursionProfile {
    pub p_x: f64,
    pub y_max: f64,
    /// `√y_max`, the excursion depth.
    pub depth: f64,
    /// Horizontal distance from `y = 1` to the apex.
    pub half_width: f64,
    /// `(x, y)` samples on the ingoing half, starting at `(0, 1)`.
    pub samples: Vec<(f64, f64)>,
}

fn integrand(tau: f64) -> f64 {
    let u = 1.0 - tau * tau;
    2.0 * u.powf(1.5) / (1.0 + u + u * u).sqrt()
}

fn gauss_legendre(a: f64, b: f64, panels: usize) -> f64 {
    let h = (b - a) / panels as f64;
    (0..panels)
        .map(|i| {
            let mid = a + (i as f64 + 0.5) * h;
            GL_NODES.iter().zip(GL_WEIGHTS).map(|(&n, w)| w * integrand(mid + 0.5 * h * n)).sum::<f64>() * 0.5 * h
        })
        .sum()
}

impl ExcursionProfile {
    fn tau(&self, y: f64) -> f64 {
        (1.0 - y / self.y_max).max(0.0).sqrt()
    }

    /// Horizontal displacement from `(0, 1)` to height `y` on the way in.
    pub fn x_at(&self, y: f64) -> f64 {
        let (t1, ty) = (self.tau(1.0), self.tau(y));
        self.y_max * gauss_legendre(ty, t1, 64)
    }

    /// Height reached at horizontal displacement `x` (ingoing half).
    pub fn y_at(&self, x: f64) -> f64 {
        let (mut lo, mut hi) = (1.0, self.y_max);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if self.x_at(mid) < x {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    /// Least-squares slope of `ln y` against `ln x` on `[y_lo, y_hi]`.
    pub fn loglog_slope(&self, y_lo: f64, y_hi: f64) -> Option<f64> {
        let pts: Vec<(f64, f64)> = self
            .samples
            .iter()
            .filter(|&&(x, y)| y >= y_lo && y <= y_hi && x > 0.0)
            .map(|&(x, y)| (x.ln(), y.ln()))
            .collect();
        if pts.len() < 3 {
            return None;
        }
        let n = pts.len() as f64;
        let (mx, my) = (pts.iter().map(|p| p.0).sum::<f64>() / n, pts.iter().map(|p| p.1).sum::<f64>() / n);
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
        Some(sxy / sxx)
    }

    /// Mid-range law `y ≈ ((5/2) D³ x)^{2/5}`.
    pub fn midrange_height(&self, x: f64) -> f64 {
        (2.5 * self.depth.powi(3) * x).powf(0.4)
    }
}

/// Profile of the WP excursion from `(0, 1)` with momentum `p_x`.
pub fn model_quadrature(p_x: f64) -> Result<ExcursionProfile, IntegrationError> {
    if !(p_x > 0.0 && p_x < 1.0) {
        return Err(IntegrationError::OutOfRange(format!("momentum p_x must lie in (0,1), got {p_x}")));
    }
    let y_max = p_x.powf(-2.0 / 3.0);
    let mut profile = ExcursionProfile { p_x, y_max, depth: y_max.sqrt(), half_width: 0.0, samples: vec![] };
    profile.half_width = profile.x_at(y_max);
    let n = 400;
    profile.samples = (0..=n)
        .map(|i| {
            let y = y_max.powf(i as f64 / n as f64);
            (profile.x_at(y), y)
        })
        .collect();
    Ok(profile)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn apex_height() {
        let p = model_quadrature(1e-3).unwrap();
        assert!((p.y_max - 100.0).abs() < 1e-9);
        assert!((p.depth - 10.0).abs() < 1e-10);
    }

    #[test]
    fn midrange_example() {
        let p = model_quadrature(1e-3).unwrap();
        let y = p.y_at(1.0);
        assert!((y - 22.9).abs() < 0.1, "{y}");
        assert!((p.midrange_height(1.0) - 2500f64.powf(0.4)).abs() < 1e-12);
    }

    #[test]
    fn quadrature_matches_direct_sum() {
        // crude midpoint rule on the original singular-free range
        let p = model_quadrature(1e-2).unwrap();
        let y = 0.5 * p.y_max;
        let n = 200_000;
        let h = (y - 1.0) / n as f64;
        let direct: f64 = (0..n)
            .map(|i| {
                let s = 1.0 + (i as f64 + 0.5) * h;
                p.p_x * s.powf(1.5) / (1.0 - p.p_x * p.p_x * s.powi(3)).sqrt()
            })
            .sum::<f64>()
            * h;
        assert!((p.x_at(y) - direct).abs() < 1e-7 * direct);
    }

    #[test]
    fn loglog_slope_in_midrange() {
        let p = model_quadrature(1e-6).unwrap();
        let s = p.loglog_slope(10.0, p.y_max / 10.0).unwrap();
        assert!((s - 0.4).abs() < 0.02, "{s}");
    }

    #[test]
    fn rejects_out_of_range() {
        assert!(model_quadrature(0.0).is_err());
        assert!(model_quadrature(1.0).is_err());
    }
}
