//! Geodesic integration for both metrics.
//!
//! Integration always happens in a *chart*: the current point is kept
//! reduced into the fundamental domain, where both metrics have the model
//! form `y^{-k/2}|dz|` and the equations are smooth. Whenever a step leaves
//! the domain the point and velocity are pushed back by the reducing
//! element, which is recorded, so every sample knows its chart exactly.
//!
//! For the WP model the crossing of a unit arc `|z - n| = 1` is where the
//! surrogate factor stops being smooth; such crossings are located as
//! events and forced onto step endpoints. Crossings of the horoball level
//! `y = h` and the apex of each excursion are located the same way.

mod closed_form;
mod quadrature;
mod rk;
mod shooting;

pub use closed_form::{direction_toward, direction_toward_boundary, hyperbolic_closed_form, ArcShape, ClosedFormArc};
pub use quadrature::{model_quadrature, ExcursionProfile};
pub use shooting::{connect, connect_lifts, SegmentBV};

use crate::metrics::{MetricId, MetricParams};
use crate::modular_group::{invariant_height, reduce, FloatMobius, GroupElement, GroupError, Lift, UHPoint};
use rk::{dopri_step, error_ratio, State};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IntegrationError {
    #[error("step size underflow at t = {t} (deepest height reached {deepest})")]
    StepUnderflow { t: f64, deepest: f64 },
    #[error("step budget exhausted at t = {t}")]
    StepBudget { t: f64 },
    #[error("integration time must be positive, got {0}")]
    InvalidDuration(f64),
    #[error("degenerate segment: endpoints coincide")]
    DegenerateSegment,
    #[error("boundary-value residual {residual:e} above tolerance after {iterations} iterations")]
    ResidualNotAchieved { residual: f64, iterations: usize },
    #[error("{0}")]
    OutOfRange(String),
    #[error(transparent)]
    Group(#[from] GroupError),
}

/// Numerical tolerances; every threshold used by the integrator and the
/// boundary-value solver lives here.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    /// Per-step local error, relative to the local geometry.
    pub step: f64,
    /// Boundary-value residual (ambient hyperbolic distance).
    pub bv_residual: f64,
    /// Largest relative speed drift tolerated before a trajectory is
    /// flagged.
    pub speed_audit: f64,
    pub min_step: f64,
    pub max_steps: usize,
    /// Metric length of one shooting segment.
    pub segment_length: f64,
    pub max_newton: usize,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            step: 1e-10,
            bv_residual: 1e-6,
            speed_audit: 1e-6,
            min_step: 1e-14,
            max_steps: 5_000_000,
            segment_length: 1.0,
            max_newton: 40,
        }
    }
}

/// Position, unit-speed velocity and time, in chart coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeodesicState {
    pub z: UHPoint,
    pub v: (f64, f64),
    pub t: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SampleKind {
    Start,
    Step,
    /// First sample inside a horoball.
    Entry,
    /// First sample back in the thick part.
    Exit,
    Apex,
    /// Crossing of a unit arc (WP cut locus).
    Cut,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub t: f64,
    /// Reduced position in the sample's chart.
    pub z: UHPoint,
    pub v: (f64, f64),
    pub chart: u32,
    pub kind: SampleKind,
}

/// A chart `g` (global → local). `offset` accumulates translations since
/// the last non-translation change and `block` counts those changes, so
/// within a block `z.x - offset` is a continuous cusp coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Chart {
    pub exact: Option<GroupElement>,
    pub approx: FloatMobius,
    /// Element taking the previous chart to this one.
    pub step: GroupElement,
    pub offset: i64,
    pub block: u32,
}

impl Chart {
    pub fn root(g: GroupElement) -> Self {
        Chart { exact: Some(g), approx: FloatMobius::from_exact(&g), step: GroupElement::IDENTITY, offset: 0, block: 0 }
    }

    pub fn advance(&self, r: GroupElement) -> Self {
        let exact = self.exact.and_then(|g| r.compose(&g).ok());
        let approx = FloatMobius::from_exact(&r).compose(&self.approx);
        let (offset, block) = match r.as_translation() {
            Some(n) => (self.offset + n, self.block),
            None => (0, self.block + 1),
        };
        Chart { exact, approx, step: r, offset, block }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub metric: MetricId,
    pub horoball_height: f64,
    pub samples: Vec<Sample>,
    pub charts: Vec<Chart>,
    /// Largest relative deviation of the metric speed from 1.
    pub conserved_audit: f64,
    /// Start time (when thick) and every horoball exit time.
    pub recurrence_times: Vec<f64>,
    /// Non-translation chart changes.
    pub cut_crossings: usize,
    pub completed_excursions: usize,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.samples.last().map_or(0.0, |s| s.t) - self.samples.first().map_or(0.0, |s| s.t)
    }

    pub fn state(&self, i: usize) -> GeodesicState {
        let s = &self.samples[i];
        GeodesicState { z: s.z, v: s.v, t: s.t }
    }

    pub fn chart_of(&self, i: usize) -> &Chart {
        &self.charts[self.samples[i].chart as usize]
    }

    pub fn lift(&self, i: usize) -> Option<Lift> {
        self.chart_of(i).exact.map(|chart| Lift { chart, local: self.samples[i].z })
    }

    /// Cusp-normalised x-coordinate, continuous within a chart block.
    pub fn unwrapped_x(&self, i: usize) -> f64 {
        self.samples[i].z.x - self.chart_of(i).offset as f64
    }

    pub fn block(&self, i: usize) -> u32 {
        self.chart_of(i).block
    }

    /// Best-effort global coordinates (loses resolution far from the base
    /// region).
    pub fn global(&self, i: usize) -> UHPoint {
        match self.lift(i) {
            Some(l) => l.global(),
            None => self.chart_of(i).approx.inverse().apply(self.samples[i].z),
        }
    }

    pub fn height(&self, i: usize) -> f64 {
        self.samples[i].z.y
    }

    /// Speed drift normalised by elapsed time.
    pub fn drift_per_unit_time(&self) -> f64 {
        self.conserved_audit / self.duration().max(1.0)
    }

    /// Relative chart element between two samples: `chart(j) · chart(i)⁻¹`,
    /// composed from the recorded steps so that it stays exact even after
    /// the absolute charts overflow.
    pub fn relative_chart(&self, i: usize, j: usize) -> Result<GroupElement, GroupError> {
        let (ci, cj) = (self.samples[i].chart as usize, self.samples[j].chart as usize);
        let (lo, hi, invert) = if ci <= cj { (ci, cj, false) } else { (cj, ci, true) };
        let mut g = GroupElement::IDENTITY;
        for c in &self.charts[lo + 1..=hi] {
            g = c.step.compose(&g)?;
        }
        Ok(if invert { g.inverse() } else { g })
    }

    /// The state of sample `i` run backwards, as a lift plus velocity.
    pub fn reversed_start(&self, i: usize) -> Option<(Lift, (f64, f64))> {
        let s = &self.samples[i];
        self.lift(i).map(|l| (l, (-s.v.0, -s.v.1)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StopRule {
    Duration(f64),
    /// Stop at the exit of the `count`-th excursion or at `max_duration`.
    Excursions { count: usize, max_duration: f64 },
}

impl StopRule {
    fn horizon(&self) -> f64 {
        match *self {
            StopRule::Duration(t) => t,
            StopRule::Excursions { max_duration, .. } => max_duration,
        }
    }
}

/// Unit-speed velocity at `z` pointing along `angle`; `z` need not be
/// reduced.
pub fn unit_velocity(m: MetricId, z: UHPoint, angle: f64) -> Result<(f64, f64), GroupError> {
    unit_velocity_k(m.exponent(), z, angle)
}

fn unit_velocity_k(k: f64, z: UHPoint, angle: f64) -> Result<(f64, f64), GroupError> {
    let f = invariant_height(z)?.powf(-0.5 * (k - 2.0)) / z.y;
    Ok((angle.cos() / f, angle.sin() / f))
}

#[derive(Debug, Clone, Copy)]
pub struct Integrator {
    pub metric: MetricId,
    pub params: MetricParams,
    pub tol: Tolerances,
    exponent: f64,
}

/// Signed distance below the nearest unit arcs `|z - n| = 1`.
fn arc_gap(n0: f64, x: f64, y: f64) -> f64 {
    let yy = y * y;
    let f = |n: f64| (x - n) * (x - n) + yy - 1.0;
    f(n0).min(f(n0 - 1.0)).min(f(n0 + 1.0))
}

impl Integrator {
    pub fn new(metric: MetricId, params: MetricParams, tol: Tolerances) -> Self {
        Self { metric, params, tol, exponent: metric.exponent() }
    }

    /// Same integrator with chart factor `y^{-k/2}`; intermediate values
    /// interpolate between the two metrics.
    pub(crate) fn with_exponent(mut self, k: f64) -> Self {
        self.exponent = k;
        self
    }

    /// Integrates from `start` with a global-frame direction `angle`.
    pub fn run_angle(&self, start: Lift, angle: f64, stop: StopRule) -> Result<Trajectory, IntegrationError> {
        let v = unit_velocity_k(self.exponent, start.local, angle)?;
        self.run(start, v, stop)
    }

    /// Integrates from `start` with chart velocity `velocity` (expressed in
    /// `start.chart` coordinates).
    pub fn run(&self, start: Lift, velocity: (f64, f64), stop: StopRule) -> Result<Trajectory, IntegrationError> {
        let horizon = stop.horizon();
        if !(horizon > 0.0) {
            return Err(IntegrationError::InvalidDuration(horizon));
        }
        let k = self.exponent;
        let factor = |z: UHPoint| z.y.powf(-0.5 * k);
        let h_ball = self.params.horoball_height;
        let tol = self.tol;

        let (w, r) = reduce(start.local)?;
        let v0 = r.push_vector(start.local, velocity);
        let mut charts = vec![Chart::root(r.compose(&start.chart)?)];
        let mut s: State = [w.x, w.y, v0.0, v0.1];
        let mut t = 0.0;
        let mut inside = w.y > h_ball;
        let mut samples = vec![Sample { t, z: w, v: v0, chart: 0, kind: SampleKind::Start }];
        let mut recurrence_times = if inside { vec![] } else { vec![0.0] };
        let mut audit = (factor(w) * v0.0.hypot(v0.1) - 1.0).abs();
        let mut cut_crossings = 0;
        let mut completed = 0;
        let mut deepest = w.y;
        let mut hstep: f64 = 1e-3;
        let mut steps = 0usize;
        // consecutive cut events of negligible length (a path through a
        // corner of the domain would otherwise cycle between its images)
        let mut tiny_cuts = 0usize;

        while t < horizon {
            steps += 1;
            if steps > tol.max_steps {
                return Err(IntegrationError::StepBudget { t });
            }
            let remaining = horizon - t;
            let hs = hstep.min(remaining);
            let (s1, err) = dopri_step(k, &s, hs);
            let ratio = error_ratio(&s, &s1, &err, tol.step);
            if !ratio.is_finite() || ratio > 1.0 || !(s1[1] > 0.0) {
                let shrink = if ratio.is_finite() { (0.9 * ratio.powf(-0.2)).max(0.1) } else { 0.1 };
                hstep = hs * shrink;
                if hstep < tol.min_step {
                    return Err(IntegrationError::StepUnderflow { t, deepest });
                }
                continue;
            }

            // events inside the accepted step; keep the earliest
            let mut best: Option<(f64, State, SampleKind)> = None;
            let mut consider = |cand: Option<(f64, State)>, kind: SampleKind| {
                if let Some((sa, st)) = cand {
                    if best.as_ref().is_none_or(|b| sa < b.0) {
                        best = Some((sa, st, kind));
                    }
                }
            };
            if !inside && s1[1] > h_ball {
                consider(locate(k, &s, hs, s[1] - h_ball, s1[1] - h_ball, |st| st[1] - h_ball), SampleKind::Entry);
            }
            if inside && s1[1] <= h_ball {
                consider(locate(k, &s, hs, s[1] - h_ball, s1[1] - h_ball, |st| st[1] - h_ball), SampleKind::Exit);
            }
            if inside && s[3] > 0.0 && s1[3] <= 0.0 {
                consider(locate(k, &s, hs, s[3], s1[3], |st| st[3]), SampleKind::Apex);
            }
            if k != 2.0 && tiny_cuts < 4 {
                let n0 = s[0].round();
                let g0 = arc_gap(n0, s[0], s[1]);
                let g1 = arc_gap(n0, s1[0], s1[1]);
                if g0 >= 0.0 && g1 < 0.0 {
                    consider(locate(k, &s, hs, g0, g1, |st| arc_gap(n0, st[0], st[1])), SampleKind::Cut);
                }
            }
            let (advance, next, kind) = best.unwrap_or((hs, s1, SampleKind::Step));
            if kind == SampleKind::Cut && advance < 1e-9 * hs.max(1e-3) {
                tiny_cuts += 1;
            } else {
                tiny_cuts = 0;
            }
            t = if advance == remaining { horizon } else { t + advance };
            s = next;
            match kind {
                SampleKind::Entry => inside = true,
                SampleKind::Exit => {
                    inside = false;
                    completed += 1;
                    recurrence_times.push(t);
                }
                _ => {}
            }

            let z = UHPoint { x: s[0], y: s[1] };
            let (w, r) = reduce(z)?;
            if !r.is_identity() {
                let v = r.push_vector(z, (s[2], s[3]));
                s = [w.x, w.y, v.0, v.1];
                let next_chart = charts.last().expect("root chart").advance(r);
                if r.as_translation().is_none() {
                    cut_crossings += 1;
                }
                charts.push(next_chart);
            }
            deepest = deepest.max(s[1]);
            let zc = UHPoint { x: s[0], y: s[1] };
            audit = audit.max((factor(zc) * s[2].hypot(s[3]) - 1.0).abs());
            samples.push(Sample { t, z: zc, v: (s[2], s[3]), chart: (charts.len() - 1) as u32, kind });

            let grow = if ratio > 0.0 { (0.9 * ratio.powf(-0.2)).clamp(0.2, 5.0) } else { 5.0 };
            hstep = hs * grow;

            if let StopRule::Excursions { count, .. } = stop {
                if completed >= count {
                    break;
                }
            }
        }

        Ok(Trajectory {
            metric: self.metric,
            horoball_height: h_ball,
            samples,
            charts,
            conserved_audit: audit,
            recurrence_times,
            cut_crossings,
            completed_excursions: completed,
        })
    }
}

/// Finds the step size at which `f` changes sign between `0` (value `f0`)
/// and `hs` (value `f1`), returning the state just past the crossing.
fn locate(k: f64, s0: &State, hs: f64, f0: f64, f1: f64, f: impl Fn(&State) -> f64) -> Option<(f64, State)> {
    let (mut lo, mut flo) = (0.0, f0);
    let (mut hi, mut fhi) = (hs, f1);
    let mut state_hi = dopri_step(k, s0, hs).0;
    let mut side = 0i8;
    for _ in 0..200 {
        if (hi - lo) <= 4.0 * f64::EPSILON * hs {
            break;
        }
        let mut m = hi - fhi * (hi - lo) / (fhi - flo);
        if !(m > lo && m < hi) {
            m = 0.5 * (lo + hi);
        }
        let st = dopri_step(k, s0, m).0;
        let fm = f(&st);
        if fm == 0.0 || (fm > 0.0) == (fhi > 0.0) {
            // keep the far side strictly past the crossing
            if fm == 0.0 {
                lo = m;
                flo = fm;
                continue;
            }
            hi = m;
            fhi = fm;
            state_hi = st;
            if side == 1 {
                flo *= 0.5;
            }
            side = 1;
        } else {
            lo = m;
            flo = fm;
            if side == -1 {
                fhi *= 0.5;
            }
            side = -1;
        }
    }
    if hi <= 0.0 {
        return None;
    }
    Some((hi, state_hi))
}

/// Integrates a ray from a global start point.
///
/// `angle` is measured counter-clockwise from the positive real direction
/// in global coordinates.
pub fn integrate_ray(
    m: MetricId,
    start: UHPoint,
    angle: f64,
    duration: f64,
    params: MetricParams,
    tol: Tolerances,
) -> Result<Trajectory, IntegrationError> {
    let start = Lift { chart: GroupElement::IDENTITY, local: UHPoint::new(start.x, start.y)? };
    Integrator::new(m, params, tol).run_angle(start, angle, StopRule::Duration(duration))
}

#[cfg(test)]
mod tests;
