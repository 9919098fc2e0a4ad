//! Comparison of WP and hyperbolic segments with common endpoints.

use crate::excursions::{thick_thin_decompose, ExcursionError, ExcursionRecord, ThickThinDecomposition, DEFAULT_MERGE_GAP};
use crate::integrator::{connect_lifts, model_quadrature, ExcursionProfile, IntegrationError, Integrator, SegmentBV, StopRule, Tolerances, Trajectory};
use crate::metrics::{hyperbolic_distance, lift_distance, MetricId, MetricParams};
use crate::modular_group::{element_to_cusp, Cusp, GroupError, HoroballDescriptor, Lift, UHPoint};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const PROFILE_CSV_HEADER: &str = "x,y_wp,y_hyp,deviation";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FellowError {
    #[error(transparent)]
    Integration(#[from] IntegrationError),
    #[error(transparent)]
    Excursion(#[from] ExcursionError),
    #[error(transparent)]
    Group(#[from] GroupError),
    #[error("endpoint {0} is not thick")]
    NotThick(&'static str),
    #[error("depth {0} too small for a mid-range window")]
    DepthTooSmall(f64),
    #[error("point lies inside the horoball")]
    InsideHoroball,
    #[error("projection search did not converge")]
    NoConvergence,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompareConfig {
    pub params: MetricParams,
    pub merge_gap: f64,
    /// Penetration `ln(y_max / h)` below which an unmatched excursion
    /// counts as shallow.
    pub shallow_penetration: f64,
    pub tol: Tolerances,
}

impl Default for CompareConfig {
    fn default() -> Self {
        Self { params: MetricParams::default(), merge_gap: DEFAULT_MERGE_GAP, shallow_penetration: 1.0, tol: Tolerances::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchedPair {
    pub cusp: Option<Cusp>,
    pub cusp_value: f64,
    pub wp: ExcursionRecord,
    pub hyp: ExcursionRecord,
    /// Ambient distance between the two entry points (and exit points)
    /// when both sides are present.
    pub entry_distance: Option<f64>,
    pub exit_distance: Option<f64>,
    /// Hausdorff distance between the two excursion arcs.
    pub deviation: Option<f64>,
}

impl MatchedPair {
    pub fn both_present(&self) -> bool {
        !self.wp.empty && !self.hyp.empty
    }

    /// `ln(y_max/h)` of the side that is present when the other is empty.
    pub fn unmatched_penetration(&self, h: f64) -> Option<f64> {
        match (self.wp.empty, self.hyp.empty) {
            (true, false) => Some((self.hyp.apex_height() / h).ln()),
            (false, true) => Some((self.wp.apex_height() / h).ln()),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub p: Lift,
    pub q: Lift,
    pub horoball_height: f64,
    pub wp_length: f64,
    pub hyp_length: f64,
    pub wp_residual: f64,
    pub hyp_residual: f64,
    pub wp: ThickThinDecomposition,
    pub hyp: ThickThinDecomposition,
    pub matched: Vec<MatchedPair>,
    /// One entry per thick block between doubly matched excursions.
    pub thick_hausdorff: Vec<f64>,
    pub r_measured: f64,
    pub max_entry_exit_distance: f64,
    /// Unmatched excursions deeper than the shallow threshold.
    pub unmatched_deep: usize,
    pub max_unmatched_penetration: f64,
}

impl ComparisonReport {
    /// Excursion counts after padding (always equal by construction).
    pub fn padded_counts(&self) -> (usize, usize) {
        (self.matched.len(), self.matched.len())
    }

    pub fn counts_match(&self) -> bool {
        self.unmatched_deep == 0
    }
}

/// Orders the two excursion lists by cusp identity, inserting empty
/// records where one side has no excursion.
pub fn match_excursions(wp: &[ExcursionRecord], hyp: &[ExcursionRecord]) -> Vec<(ExcursionRecord, ExcursionRecord)> {
    let key = |e: &ExcursionRecord| e.cusp;
    let mut out = vec![];
    let (mut i, mut j) = (0, 0);
    while i < wp.len() || j < hyp.len() {
        match (wp.get(i), hyp.get(j)) {
            (Some(a), Some(b)) if key(a).is_some() && key(a) == key(b) => {
                out.push((a.clone(), b.clone()));
                i += 1;
                j += 1;
            }
            (Some(a), Some(b)) => {
                let a_later_in_hyp = hyp[j..].iter().any(|e| key(e).is_some() && key(e) == key(a));
                if a_later_in_hyp {
                    out.push((ExcursionRecord::empty_at(b.cusp, b.cusp_value, b.entry_time), b.clone()));
                    j += 1;
                } else {
                    out.push((a.clone(), ExcursionRecord::empty_at(a.cusp, a.cusp_value, a.entry_time)));
                    i += 1;
                }
            }
            (Some(a), None) => {
                out.push((a.clone(), ExcursionRecord::empty_at(a.cusp, a.cusp_value, a.entry_time)));
                i += 1;
            }
            (None, Some(b)) => {
                out.push((ExcursionRecord::empty_at(b.cusp, b.cusp_value, b.entry_time), b.clone()));
                j += 1;
            }
            (None, None) => unreachable!(),
        }
    }
    out
}

/// Distance from `a` to the geodesic segment `[b0, b1]`, all in one chart.
fn point_segment_distance(a: UHPoint, b0: UHPoint, b1: UHPoint) -> f64 {
    let d0 = hyperbolic_distance(a, b0);
    let d1 = hyperbolic_distance(a, b1);
    let len = hyperbolic_distance(b0, b1);
    if len < 1e-14 {
        return d0.min(d1);
    }
    let arc = crate::integrator::hyperbolic_closed_form(b0, b1);
    let dg = arc.distance_to_geodesic(a);
    // cosh d = cosh d_g cosh s along the foot of the perpendicular
    let s0 = (d0.cosh() / dg.cosh()).max(1.0).acosh();
    let s1 = (d1.cosh() / dg.cosh()).max(1.0).acosh();
    if (s0 + s1 - len).abs() <= 1e-9 * (1.0 + len) || s0.max(s1) <= len {
        dg
    } else {
        d0.min(d1)
    }
}

/// Directed distance `sup_{a ∈ A} dist(a, polyline B)`, where `B` is the
/// set of sample indices `bs` of `tb` and only consecutive indices are
/// joined.
fn directed(ta: &Trajectory, as_: &[usize], tb: &Trajectory, bs: &[usize]) -> f64 {
    let mut worst = 0.0f64;
    for &i in as_ {
        let Some(a) = ta.lift(i) else { continue };
        let local = |j: usize| tb.lift(j).and_then(|l| l.in_chart(&a.chart).ok());
        let mut best = f64::INFINITY;
        for (k, &j) in bs.iter().enumerate() {
            let Some(b0) = local(j) else { continue };
            best = best.min(hyperbolic_distance(a.local, b0));
            if let Some(&j1) = bs.get(k + 1) {
                if j1 == j + 1 {
                    if let Some(b1) = local(j1) {
                        best = best.min(point_segment_distance(a.local, b0, b1));
                    }
                }
            }
        }
        if best.is_finite() {
            worst = worst.max(best);
        }
    }
    worst
}

pub fn hausdorff(ta: &Trajectory, as_: &[usize], tb: &Trajectory, bs: &[usize]) -> f64 {
    if as_.is_empty() || bs.is_empty() {
        return 0.0;
    }
    directed(ta, as_, tb, bs).max(directed(tb, bs, ta, as_))
}

fn thick_indices(t: &Trajectory, lo: usize, hi: usize, h: f64) -> Vec<usize> {
    (lo..=hi).filter(|&i| t.samples[i].z.y <= h).collect()
}

/// Builds both segments between `p` and `q` and compares them.
pub fn compare_segments(p: Lift, q: Lift, cfg: &CompareConfig) -> Result<ComparisonReport, FellowError> {
    let h = cfg.params.horoball_height;
    if p.local.y > h || crate::modular_group::invariant_height(p.local)? > h {
        return Err(FellowError::NotThick("p"));
    }
    if crate::modular_group::invariant_height(q.local)? > h {
        return Err(FellowError::NotThick("q"));
    }
    let wp = connect_lifts(MetricId::WpModel, p, q, cfg.params, cfg.tol)?;
    let hyp = connect_lifts(MetricId::Hyperbolic, p, q, cfg.params, cfg.tol)?;
    compare_solved(&wp, &hyp, cfg)
}

/// Comparison of two already solved segments.
pub fn compare_solved(wp: &SegmentBV, hyp: &SegmentBV, cfg: &CompareConfig) -> Result<ComparisonReport, FellowError> {
    let h = cfg.params.horoball_height;
    let (tw, th) = (&wp.trajectory, &hyp.trajectory);
    let dw = thick_thin_decompose(tw, h, cfg.merge_gap)?;
    let dh = thick_thin_decompose(th, h, cfg.merge_gap)?;
    let pairs = match_excursions(&dw.excursions, &dh.excursions);

    let mut matched = Vec::with_capacity(pairs.len());
    let mut blocks = vec![];
    let (mut wlo, mut hlo) = (0usize, 0usize);
    let mut max_ee = 0.0f64;
    for (a, b) in pairs {
        let mut m = MatchedPair {
            cusp: if a.empty { b.cusp } else { a.cusp },
            cusp_value: if a.empty { b.cusp_value } else { a.cusp_value },
            entry_distance: None,
            exit_distance: None,
            deviation: None,
            wp: a,
            hyp: b,
        };
        if m.both_present() {
            let dist = |i: usize, j: usize| match (tw.lift(i), th.lift(j)) {
                (Some(x), Some(y)) => Some(lift_distance(&x, &y)),
                _ => None,
            };
            m.entry_distance = dist(m.wp.entry_index, m.hyp.entry_index);
            m.exit_distance = dist(m.wp.exit_index, m.hyp.exit_index);
            max_ee = max_ee.max(m.entry_distance.unwrap_or(0.0)).max(m.exit_distance.unwrap_or(0.0));
            let wi: Vec<usize> = (m.wp.entry_index..=m.wp.exit_index).collect();
            let hi: Vec<usize> = (m.hyp.entry_index..=m.hyp.exit_index).collect();
            m.deviation = Some(hausdorff(tw, &wi, th, &hi));
            blocks.push(((wlo, m.wp.entry_index), (hlo, m.hyp.entry_index)));
            wlo = m.wp.exit_index;
            hlo = m.hyp.exit_index;
        }
        matched.push(m);
    }
    blocks.push(((wlo, tw.len() - 1), (hlo, th.len() - 1)));

    let thick_hausdorff: Vec<f64> = blocks
        .iter()
        .map(|&((a0, a1), (b0, b1))| hausdorff(tw, &thick_indices(tw, a0, a1, h), th, &thick_indices(th, b0, b1, h)))
        .collect();
    let r_measured = thick_hausdorff.iter().cloned().fold(0.0, f64::max);
    let pens: Vec<f64> = matched.iter().filter_map(|m| m.unmatched_penetration(h)).collect();
    Ok(ComparisonReport {
        p: wp.p,
        q: wp.q,
        horoball_height: h,
        wp_length: wp.length,
        hyp_length: hyp.length,
        wp_residual: wp.residual,
        hyp_residual: hyp.residual,
        unmatched_deep: pens.iter().filter(|&&x| x >= cfg.shallow_penetration).count(),
        max_unmatched_penetration: pens.iter().cloned().fold(0.0, f64::max),
        wp: dw,
        hyp: dh,
        matched,
        thick_hausdorff,
        r_measured,
        max_entry_exit_distance: max_ee,
    })
}

/// A random reduced thick point.
pub fn random_thick_point<R: Rng>(rng: &mut R, h: f64) -> Lift {
    loop {
        let x: f64 = rng.gen_range(-0.5..0.5);
        let y: f64 = rng.gen_range(0.85..h);
        let z = UHPoint { x, y };
        if z.norm_sqr() >= 1.0 {
            return Lift { chart: crate::modular_group::GroupElement::IDENTITY, local: z };
        }
    }
}

/// Thick endpoint pair at hyperbolic distance close to `d`: `q` is the
/// last thick point at or before time `d` on a random hyperbolic ray from
/// a random thick `p`.
pub fn random_thick_pair<R: Rng>(rng: &mut R, d: f64, params: MetricParams, tol: Tolerances) -> Result<(Lift, Lift), FellowError> {
    let h = params.horoball_height;
    let p = random_thick_point(rng, h);
    let angle: f64 = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
    let ray = Integrator::new(MetricId::Hyperbolic, params, tol).run_angle(p, angle, StopRule::Duration(d))?;
    let i = (0..ray.len()).rev().find(|&i| ray.samples[i].z.y <= h).expect("start is thick");
    let q = ray.lift(i).ok_or(GroupError::Overflow)?;
    Ok((p, q))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileRow {
    pub x: f64,
    pub y_wp: f64,
    pub y_hyp: f64,
    pub deviation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviationProfile {
    pub depth: f64,
    pub y_max_wp: f64,
    pub y_max_hyp: f64,
    pub rows: Vec<ProfileRow>,
    /// Height window of the fit.
    pub window: (f64, f64),
    pub fitted_exponent: f64,
    pub fitted_coefficient: f64,
    /// Root-mean-square residual of the log-log fit.
    pub fit_residual: f64,
    /// Largest relative gap between the integrated WP excursion and the
    /// quadrature at the table abscissae.
    pub integration_check: f64,
}

impl DeviationProfile {
    pub fn csv(&self) -> String {
        let mut s = String::from(PROFILE_CSV_HEADER);
        s.push('\n');
        for r in &self.rows {
            s.push_str(&format!("{},{},{},{}\n", r.x, r.y_wp, r.y_hyp, r.deviation));
        }
        s
    }
}

/// Lower end of the mid-range fit window and the fraction of `y_max` at
/// its upper end.
pub const FIT_WINDOW_LOW: f64 = 5.0;
pub const FIT_WINDOW_HIGH_FRACTION: f64 = 0.25;

/// Least-squares `(slope, intercept, rms residual)`.
pub fn linear_fit(pts: &[(f64, f64)]) -> (f64, f64, f64) {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let slope = sxy / sxx;
    let icpt = my - slope * mx;
    let rms = (pts.iter().map(|p| (p.1 - icpt - slope * p.0).powi(2)).sum::<f64>() / n).sqrt();
    (slope, icpt, rms)
}

/// Ingoing-half comparison of a WP excursion of apex height `D²` with the
/// hyperbolic arc through `(0,1)` and `(2D², 1)`.
pub fn deviation_profile(depth: f64, tol: Tolerances) -> Result<DeviationProfile, FellowError> {
    if !(depth >= 5.0) {
        return Err(FellowError::DepthTooSmall(depth));
    }
    let d2 = depth * depth;
    let prof: ExcursionProfile = model_quadrature(depth.powi(-3))?;
    let y_hyp = |x: f64| (1.0 + 2.0 * d2 * x - x * x).sqrt();
    let n = 200;
    let x_lo = 1e-3;
    let rows: Vec<ProfileRow> = (0..=n)
        .map(|i| {
            let x = x_lo * (prof.half_width / x_lo).powf(i as f64 / n as f64);
            let (yw, yh) = (prof.y_at(x), y_hyp(x));
            ProfileRow { x, y_wp: yw, y_hyp: yh, deviation: (yw / yh).ln().abs() }
        })
        .collect();
    let window = (FIT_WINDOW_LOW, FIT_WINDOW_HIGH_FRACTION * prof.y_max);
    let pts: Vec<(f64, f64)> = rows.iter().filter(|r| r.y_wp >= window.0 && r.y_wp <= window.1).map(|r| (r.x.ln(), r.y_wp.ln())).collect();
    if pts.len() < 5 {
        return Err(FellowError::DepthTooSmall(depth));
    }
    let (slope, icpt, rms) = linear_fit(&pts);

    // independent check against the integrated geodesic
    let px = prof.p_x;
    let integ = Integrator::new(MetricId::WpModel, MetricParams::default(), tol);
    let traj = integ.run(Lift { chart: crate::modular_group::GroupElement::IDENTITY, local: UHPoint::I }, (px, (1.0 - px * px).sqrt()), StopRule::Excursions { count: 1, max_duration: 100.0 })?;
    let mut check = 0.0f64;
    let apex = traj.samples.iter().position(|s| s.kind == crate::integrator::SampleKind::Apex).unwrap_or(traj.len() - 1);
    for i in 0..apex {
        let x = traj.unwrapped_x(i);
        if x > x_lo && traj.block(i) == traj.block(0) {
            check = check.max((prof.y_at(x) - traj.samples[i].z.y).abs() / traj.samples[i].z.y);
        }
    }
    Ok(DeviationProfile {
        depth,
        y_max_wp: prof.y_max,
        y_max_hyp: (1.0 + d2 * d2).sqrt(),
        rows,
        window,
        fitted_exponent: slope,
        fitted_coefficient: icpt.exp(),
        fit_residual: rms,
        integration_check: check,
    })
}

/// Slope of `ln y` against `ln x` through least squares (exposed for
/// depth-grid fits).
pub fn loglog_slope(pts: &[(f64, f64)]) -> f64 {
    let logs: Vec<(f64, f64)> = pts.iter().map(|&(x, y)| (x.ln(), y.ln())).collect();
    linear_fit(&logs).0
}

/// Closest point of `∂H` to `p` in metric `m`.
///
/// Both metrics are equivariant, so the work happens in the chart where
/// the cusp is at infinity. There the hyperbolic foot lies straight above
/// `p`. For WP the perpendiculars leaving the horocycle downwards sweep
/// the thick side monotonically, and bisection finds the one through `p`.
pub fn project_to_horoball(m: MetricId, ball: &HoroballDescriptor, p: UHPoint, params: MetricParams, tol: Tolerances) -> Result<UHPoint, FellowError> {
    if ball.contains(p) {
        return Err(FellowError::InsideHoroball);
    }
    let (g, h) = match *ball {
        HoroballDescriptor::HalfPlane { height } => (crate::modular_group::GroupElement::IDENTITY, height),
        HoroballDescriptor::Disk { cusp, diameter, .. } => {
            let g = element_to_cusp(cusp).inverse();
            // the image of the disk under g is a half-plane; its height
            // follows from the image of the top point
            let top = UHPoint { x: cusp.value(), y: diameter };
            (g, g.apply(top).y)
        }
    };
    let pl = g.apply(p);
    let foot = match m {
        MetricId::Hyperbolic => UHPoint { x: pl.x, y: h },
        MetricId::WpModel => UHPoint { x: wp_foot(pl, h, params, tol)?, y: h },
    };
    Ok(g.inverse().apply(foot))
}

/// Signed horizontal miss of the perpendicular from `(x, h)` at its
/// closest approach to `p`.
fn perpendicular_miss(x: f64, p: UHPoint, h: f64, params: MetricParams, tol: Tolerances) -> Result<(f64, f64), FellowError> {
    let d_top = hyperbolic_distance(UHPoint { x, y: h }, p);
    let integ = Integrator::new(MetricId::WpModel, params, tol);
    let v = crate::integrator::unit_velocity(MetricId::WpModel, UHPoint { x, y: h }, -std::f64::consts::FRAC_PI_2)?;
    let traj = integ.run(Lift { chart: crate::modular_group::GroupElement::IDENTITY, local: UHPoint { x, y: h } }, v, StopRule::Duration(1.5 * d_top + 0.5))?;
    let closest = (0..traj.len())
        .min_by(|&a, &b| hyperbolic_distance(traj.global(a), p).total_cmp(&hyperbolic_distance(traj.global(b), p)))
        .ok_or(FellowError::NoConvergence)?;
    // refine between the neighbouring samples by golden-section search
    let i0 = closest.saturating_sub(1);
    let span = traj.samples[(closest + 1).min(traj.len() - 1)].t - traj.samples[i0].t;
    let (Some(start), v0) = (traj.lift(i0), traj.samples[i0].v) else {
        let z = traj.global(closest);
        return Ok((z.x - p.x, hyperbolic_distance(z, p)));
    };
    let at = |s: f64| -> Result<UHPoint, FellowError> {
        if s <= 0.0 {
            return Ok(start.global());
        }
        let t = integ.run(start, v0, StopRule::Duration(s))?;
        Ok(t.global(t.len() - 1))
    };
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let (mut a, mut b) = (0.0, span);
    let (mut c, mut d) = (b - g * (b - a), a + g * (b - a));
    let (mut fc, mut fd) = (hyperbolic_distance(at(c)?, p), hyperbolic_distance(at(d)?, p));
    while b - a > 1e-12 {
        if fc < fd {
            (b, d, fd) = (d, c, fc);
            c = b - g * (b - a);
            fc = hyperbolic_distance(at(c)?, p);
        } else {
            (a, c, fc) = (c, d, fd);
            d = a + g * (b - a);
            fd = hyperbolic_distance(at(d)?, p);
        }
    }
    let z = at(0.5 * (a + b))?;
    Ok((z.x - p.x, hyperbolic_distance(z, p)))
}

fn wp_foot(p: UHPoint, h: f64, params: MetricParams, tol: Tolerances) -> Result<f64, FellowError> {
    if p.y >= crate::metrics::CUSP_FLOOR {
        return Ok(p.x);
    }
    let miss = |x: f64| perpendicular_miss(x, p, h, params, tol).map(|m| m.0);
    let (mut lo, mut hi) = (p.x - 1.0, p.x + 1.0);
    let (mut flo, mut fhi) = (miss(lo)?, miss(hi)?);
    let mut grow = 0;
    while flo.signum() == fhi.signum() {
        grow += 1;
        if grow > 6 {
            return Err(FellowError::NoConvergence);
        }
        let w = hi - lo;
        lo -= w;
        hi += w;
        flo = miss(lo)?;
        fhi = miss(hi)?;
    }
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        let fm = miss(mid)?;
        if fm.signum() == flo.signum() {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-10 {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[cfg(test)]
mod tests;
