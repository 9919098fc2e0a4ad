//! Monte Carlo experiments over random directions at a base point.
//!
//! Every quantity is a pure function of an [`ExperimentConfig`]. Ray `i`
//! draws from its own ChaCha stream, rays run in parallel, and results are
//! collected in index order.

use crate::excursions::{align_with_point, cf_value, coding, convergents, decompose_ray, exact_cf, rational_cf, CodingSequence, ExcursionError, ThickThinDecomposition, DEFAULT_MERGE_GAP};
use crate::integrator::{direction_toward_boundary, IntegrationError, Integrator, StopRule, Tolerances, Trajectory};
use crate::metrics::{hyperbolic_distance, MetricId, MetricParams};
use crate::modular_group::{Cusp, Lift, UHPoint};
use num_bigint::{BigUint, RandBigInt};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::{FRAC_PI_2, PI, TAU};
use thiserror::Error;

pub const RAY_CSV_HEADER: &str = "ray,angle,horizon,recurrence_time,winding,excursions,hyp_distance";
pub const PSI_CSV_HEADER: &str = "ray,angle,recurrent,psi_v,psi_unit,coding_value,coefficients";
/// Minimum number of recurrent samples for the singularity diagnostic.
pub const MIN_DIAGNOSTIC_SAMPLES: usize = 1000;
pub const DIAGNOSTIC_LABEL: &str = "exploratory evidence, not a proof";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error(transparent)]
    Integration(#[from] IntegrationError),
    #[error(transparent)]
    Excursion(#[from] ExcursionError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub metric: MetricId,
    pub rays: usize,
    /// Time horizon `T`.
    pub time: f64,
    /// Coefficient count `K`.
    pub coefficients: usize,
    pub horoball_height: f64,
    pub base: UHPoint,
    pub seed: u64,
    pub tol: Tolerances,
    pub merge_gap: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            metric: MetricId::WpModel,
            rays: 200,
            time: 500.0,
            coefficients: 100,
            horoball_height: MetricParams::default().horoball_height,
            base: UHPoint { x: 0.2, y: 1.0 },
            seed: 1,
            tol: Tolerances::default(),
            merge_gap: DEFAULT_MERGE_GAP,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), StatsError> {
        let bad = |m: &str| Err(StatsError::InvalidConfig(m.to_string()));
        if self.rays == 0 {
            return bad("rays must be positive");
        }
        if !(self.time > 0.0 && self.time.is_finite()) {
            return bad("time must be positive");
        }
        if self.coefficients == 0 {
            return bad("coefficients must be positive");
        }
        if !(self.base.y > 0.0 && self.base.x.is_finite() && self.base.y.is_finite()) {
            return bad("base point must lie in the upper half-plane");
        }
        if !(self.merge_gap >= 0.0) {
            return bad("merge_gap must be non-negative");
        }
        self.params()?;
        Ok(())
    }

    pub fn params(&self) -> Result<MetricParams, StatsError> {
        MetricParams::new(self.horoball_height).map_err(|e| StatsError::InvalidConfig(e.to_string()))
    }

    fn integrate(&self, angle: f64, duration: f64) -> Result<(Trajectory, ThickThinDecomposition), StatsError> {
        let integ = Integrator::new(self.metric, self.params()?, self.tol);
        let start = Lift::from_global(self.base).map_err(|e| StatsError::InvalidConfig(e.to_string()))?;
        let traj = integ.run_angle(start, angle, StopRule::Duration(duration))?;
        let d = decompose_ray(&traj, self.horoball_height, self.merge_gap)?;
        Ok((traj, d))
    }
}

/// Random stream of ray `index`.
pub fn ray_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// Uniform direction angles in `[-π, π)`, one per ray.
pub fn sample_directions(cfg: &ExperimentConfig) -> Vec<f64> {
    (0..cfg.rays).map(|i| ray_rng(cfg.seed, i).gen_range(-PI..PI)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quantiles {
    pub min: f64,
    pub q10: f64,
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
    pub q90: f64,
    pub max: f64,
    pub mean: f64,
}

impl Quantiles {
    pub fn of(values: &[f64]) -> Option<Quantiles> {
        let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
        if v.is_empty() {
            return None;
        }
        v.sort_by(f64::total_cmp);
        let q = |p: f64| {
            let h = p * (v.len() - 1) as f64;
            let (i, f) = (h.floor() as usize, h - h.floor());
            if i + 1 < v.len() {
                v[i] + f * (v[i + 1] - v[i])
            } else {
                v[i]
            }
        };
        Some(Quantiles { min: v[0], q10: q(0.1), q25: q(0.25), median: q(0.5), q75: q(0.75), q90: q(0.9), max: v[v.len() - 1], mean: v.iter().sum::<f64>() / v.len() as f64 })
    }
}

/// State of one ray at one horizon.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RayPoint {
    pub horizon: f64,
    /// Last horoball exit at or before the horizon (0 if none).
    pub recurrence_time: f64,
    /// Total `|winding|` of the excursions completed by `recurrence_time`.
    pub winding: f64,
    pub excursions: usize,
    /// `d_hyp(p, γ(recurrence_time))`.
    pub hyp_distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RaySeries {
    pub ray: usize,
    pub angle: f64,
    pub points: Vec<RayPoint>,
    pub error: Option<String>,
}

fn series_points(cfg: &ExperimentConfig, traj: &Trajectory, d: &ThickThinDecomposition, horizons: &[f64]) -> Vec<RayPoint> {
    horizons
        .iter()
        .map(|&horizon| {
            let done: Vec<_> = d.excursions.iter().filter(|e| !e.empty && e.exit_time <= horizon).collect();
            let (recurrence_time, idx) = done.last().map_or((0.0, 0), |e| (e.exit_time, e.exit_index));
            RayPoint {
                horizon,
                recurrence_time,
                winding: done.iter().map(|e| e.winding).sum(),
                excursions: done.len(),
                hyp_distance: hyperbolic_distance(cfg.base, traj.global(idx)),
            }
        })
        .collect()
}

/// Integrates every ray up to the largest horizon and records its state at
/// each horizon.
pub fn ray_series(cfg: &ExperimentConfig, horizons: &[f64]) -> Result<Vec<RaySeries>, StatsError> {
    cfg.validate()?;
    let t_max = horizons.iter().copied().fold(0.0, f64::max);
    if !(t_max > 0.0) {
        return Err(StatsError::InvalidConfig("horizons must be positive".into()));
    }
    let angles = sample_directions(cfg);
    Ok(angles
        .par_iter()
        .enumerate()
        .map(|(ray, &angle)| match cfg.integrate(angle, t_max) {
            Ok((traj, d)) => RaySeries { ray, angle, points: series_points(cfg, &traj, &d, horizons), error: None },
            Err(e) => RaySeries { ray, angle, points: vec![], error: Some(e.to_string()) },
        })
        .collect())
}

pub fn series_csv(series: &[RaySeries]) -> String {
    let mut out = String::from(RAY_CSV_HEADER);
    out.push('\n');
    for s in series {
        for p in &s.points {
            out.push_str(&format!("{},{},{},{},{},{},{}\n", s.ray, s.angle, p.horizon, p.recurrence_time, p.winding, p.excursions, p.hyp_distance));
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HorizonSummary {
    pub horizon: f64,
    pub rays: usize,
    pub failures: usize,
    /// `W/T` (WP) or `W/(S log S)` (hyperbolic).
    pub winding_ratio: Option<Quantiles>,
    /// `N(T)/T`.
    pub excursion_rate: Option<Quantiles>,
    /// `d_hyp(p, γ(T*))/T*` at the last recurrence time `T*`.
    pub time_change: Option<Quantiles>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrowthReport {
    pub metric: MetricId,
    pub normalisation: String,
    pub horizons: Vec<HorizonSummary>,
    /// Failed rays as `(index, message)`.
    pub failures: Vec<(usize, String)>,
}

fn winding_norm(m: MetricId, t: f64) -> f64 {
    match m {
        MetricId::WpModel => t,
        MetricId::Hyperbolic => t * t.ln(),
    }
}

pub fn summarize_growth(cfg: &ExperimentConfig, series: &[RaySeries], horizons: &[f64]) -> GrowthReport {
    let ok: Vec<&RaySeries> = series.iter().filter(|s| s.error.is_none()).collect();
    let failures: Vec<(usize, String)> = series.iter().filter_map(|s| s.error.clone().map(|e| (s.ray, e))).collect();
    let rows = horizons
        .iter()
        .enumerate()
        .map(|(h, &horizon)| {
            let pts: Vec<&RayPoint> = ok.iter().map(|s| &s.points[h]).collect();
            let wind: Vec<f64> = pts.iter().map(|p| p.winding / winding_norm(cfg.metric, horizon)).collect();
            let rate: Vec<f64> = pts.iter().map(|p| p.excursions as f64 / horizon).collect();
            let change: Vec<f64> = pts.iter().filter(|p| p.recurrence_time > 0.0).map(|p| p.hyp_distance / p.recurrence_time).collect();
            HorizonSummary {
                horizon,
                rays: pts.len(),
                failures: failures.len(),
                winding_ratio: Quantiles::of(&wind),
                excursion_rate: Quantiles::of(&rate),
                time_change: Quantiles::of(&change),
            }
        })
        .collect();
    let normalisation = match cfg.metric {
        MetricId::WpModel => "T",
        MetricId::Hyperbolic => "S log S",
    };
    GrowthReport { metric: cfg.metric, normalisation: normalisation.into(), horizons: rows, failures }
}

/// Winding growth at each horizon, with excursion rates and the time change
/// as companion columns.
pub fn winding_growth(cfg: &ExperimentConfig, horizons: &[f64]) -> Result<(GrowthReport, Vec<RaySeries>), StatsError> {
    let series = ray_series(cfg, horizons)?;
    Ok((summarize_growth(cfg, &series, horizons), series))
}

/// Quantiles of `d_hyp(p, γ(T*))/T*` per horizon.
pub fn time_change(cfg: &ExperimentConfig, horizons: &[f64]) -> Result<Vec<(f64, Option<Quantiles>)>, StatsError> {
    let (report, _) = winding_growth(cfg, horizons)?;
    Ok(report.horizons.iter().map(|h| (h.horizon, h.time_change)).collect())
}

/// `10, 20, 50, 100, …` up to `k`.
pub fn count_grid(k: usize) -> Vec<usize> {
    let mut out = vec![];
    let mut scale = 10usize;
    while scale <= k {
        for m in [1, 2, 5] {
            if m * scale <= k {
                out.push(m * scale);
            }
        }
        scale = scale.saturating_mul(10);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientRow {
    pub n: usize,
    pub rays: usize,
    /// Rays with fewer than `n` coefficients.
    pub short: usize,
    /// Quantiles of the running average `(a_1 + … + a_n)/n`; `None` unless
    /// every ray has `n` coefficients.
    pub average: Option<Quantiles>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientReport {
    pub metric: MetricId,
    pub source: String,
    pub rows: Vec<CoefficientRow>,
    /// Least-squares slope of the running average against `ln n`: the median
    /// over rays for the hyperbolic metric, the mean for WP.
    pub log_slope: Option<f64>,
    pub failures: Vec<(usize, String)>,
}

impl CoefficientReport {
    pub fn median_at(&self, n: usize) -> Option<f64> {
        self.rows.iter().find(|r| r.n == n).and_then(|r| r.average.map(|q| q.median))
    }
}

/// Bits of a random endpoint that keep `k` coefficients exact with a wide
/// margin.
fn endpoint_bits(k: usize) -> u64 {
    (3.7 * k as f64) as u64 + 512
}

fn ray_coefficients(cfg: &ExperimentConfig, ray: usize, angle: f64) -> Result<Vec<u64>, StatsError> {
    match cfg.metric {
        MetricId::Hyperbolic => {
            let bits = endpoint_bits(cfg.coefficients);
            let num = ray_rng(cfg.seed, ray).gen_biguint(bits);
            let den = BigUint::from(1u8) << bits as usize;
            Ok(exact_cf(&num, &den, cfg.coefficients))
        }
        MetricId::WpModel => {
            let (traj, d) = cfg.integrate(angle, cfg.time)?;
            let mut c = coding(&traj, &d)?.coefficients;
            c.truncate(cfg.coefficients);
            Ok(c)
        }
    }
}

/// Running coefficient averages at each `n` in `counts`. Hyperbolic rays
/// use the exact expansion of a uniformly random endpoint; WP rays use the
/// excursion coding of the integrated ray up to time `T`.
pub fn coefficient_stats(cfg: &ExperimentConfig, counts: &[usize]) -> Result<CoefficientReport, StatsError> {
    cfg.validate()?;
    let angles = sample_directions(cfg);
    let per_ray: Vec<Result<Vec<u64>, StatsError>> = angles.par_iter().enumerate().map(|(i, &a)| ray_coefficients(cfg, i, a)).collect();
    let failures = per_ray.iter().enumerate().filter_map(|(i, r)| r.as_ref().err().map(|e| (i, e.to_string()))).collect();
    let ok: Vec<&Vec<u64>> = per_ray.iter().filter_map(|r| r.as_ref().ok()).collect();
    let rows: Vec<CoefficientRow> = counts
        .iter()
        .map(|&n| {
            let avgs: Vec<f64> = ok.iter().filter(|c| c.len() >= n).map(|c| c[..n].iter().map(|&a| a as f64).sum::<f64>() / n as f64).collect();
            let short = ok.len() - avgs.len();
            // rays that reach `n` within the horizon are a biased subsample
            CoefficientRow { n, rays: avgs.len(), short, average: if short == 0 { Quantiles::of(&avgs) } else { None } }
        })
        .collect();
    let centre = |q: Quantiles| match cfg.metric {
        MetricId::Hyperbolic => q.median,
        MetricId::WpModel => q.mean,
    };
    let pts: Vec<(f64, f64)> = rows.iter().filter_map(|r| r.average.map(|q| ((r.n as f64).ln(), centre(q)))).collect();
    let log_slope = (pts.len() >= 2).then(|| crate::fellow_travel::linear_fit(&pts).0);
    let source = match cfg.metric {
        MetricId::Hyperbolic => "gauss_map",
        MetricId::WpModel => "wp_excursions",
    };
    Ok(CoefficientReport { metric: cfg.metric, source: source.into(), rows, log_slope, failures })
}

/// Position on the circle of directions at `base`, in `[0, 1)`, measured
/// counterclockwise from the direction of the cusp at infinity.
pub fn boundary_to_unit(base: UHPoint, x: f64) -> f64 {
    let a = direction_toward_boundary(base, x.is_finite().then_some(x));
    angle_to_unit(a)
}

pub fn angle_to_unit(angle: f64) -> f64 {
    let u = (angle - FRAC_PI_2).rem_euclid(TAU) / TAU;
    if u >= 1.0 {
        0.0
    } else {
        u
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundTrip {
    pub compared: usize,
    pub within_one: usize,
    pub exact: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsiSample {
    pub ray: usize,
    /// Direction angle `v` at the base point.
    pub angle: f64,
    pub coding: CodingSequence,
    /// Boundary point of the last excursion, the finite-time estimate of `ψ(v)`.
    pub psi_v: f64,
    /// `psi_v` as a position on the circle of directions, see [`boundary_to_unit`].
    pub psi_unit: f64,
    /// Last exactly known cusp visited, the exact stand-in for `psi_v`.
    pub label: Option<Cusp>,
    /// `[0; a1, a2, …]` of the coding itself.
    pub coding_value: Option<f64>,
    pub recurrent: bool,
    /// Coding of the hyperbolic ray toward `ψ(v)` against the WP coding.
    pub round_trip: RoundTrip,
}

impl PsiSample {
    /// Interval in `[0,1)` of directions whose endpoints share the first
    /// `depth` coefficients of `ψ(v)`; degenerate once the exact label
    /// runs out.
    pub fn cylinder(&self, base: UHPoint, depth: usize) -> (f64, f64) {
        let point = (self.psi_unit, self.psi_unit);
        let Some(label) = self.label.filter(|c| !c.is_infinity()) else {
            return point;
        };
        let cf = rational_cf(label.p as i128, label.q as i128);
        if depth + 1 >= cf.len() {
            return point;
        }
        let b0 = cf[0];
        let tail: Vec<u64> = cf[1..=depth].iter().map(|&c| c as u64).collect();
        let conv = convergents(&tail);
        let (pk, qk) = conv[conv.len() - 1];
        let (pm, qm) = if conv.len() >= 2 { conv[conv.len() - 2] } else { (1, 0) };
        let ends = [(pk, qk), (pk + pm, qk + qm)].map(|(p, q)| boundary_to_unit(base, b0 as f64 + p as f64 / q as f64));
        (ends[0].min(ends[1]), ends[0].max(ends[1]))
    }

    pub fn csv_row(&self) -> String {
        let coefs: Vec<String> = self.coding.coefficients.iter().map(|c| c.to_string()).collect();
        let cv = self.coding_value.map_or(String::new(), |v| v.to_string());
        format!("{},{},{},{},{},{},{}", self.ray, self.angle, self.recurrent, self.psi_v, self.psi_unit, cv, coefs.join(" "))
    }
}

fn round_trip(d: &ThickThinDecomposition, c: &CodingSequence, label: Option<Cusp>) -> RoundTrip {
    let mut rt = RoundTrip { compared: 0, within_one: 0, exact: 0 };
    let Some(label) = label.filter(|c| !c.is_infinity()) else {
        return rt;
    };
    let cf = rational_cf(label.p as i128, label.q as i128);
    let expansion: Vec<u64> = cf[1..].iter().map(|&a| a as u64).collect();
    // the last two coefficients of a rational stand-in are not those of ψ
    let reliable = expansion.len().saturating_sub(2);
    for a in align_with_point(d, c, cf[0] as i64, &expansion).iter().filter(|a| a.index < reliable) {
        rt.compared += 1;
        rt.within_one += (a.coding.abs_diff(a.oracle) <= 1) as usize;
        rt.exact += (a.coding == a.oracle) as usize;
    }
    rt
}

fn psi_sample(cfg: &ExperimentConfig, ray: usize, angle: f64) -> PsiSample {
    let mut s = PsiSample {
        ray,
        angle,
        coding: CodingSequence::from_coefficients(vec![], crate::excursions::CodingSource::for_metric(cfg.metric)),
        psi_v: f64::NAN,
        psi_unit: f64::NAN,
        label: None,
        coding_value: None,
        recurrent: false,
        round_trip: RoundTrip { compared: 0, within_one: 0, exact: 0 },
    };
    let Ok((traj, d)) = cfg.integrate(angle, cfg.time) else {
        return s;
    };
    let Ok(c) = coding(&traj, &d) else {
        return s;
    };
    let Some(last) = d.excursions.iter().rev().find(|e| !e.empty) else {
        s.coding = c;
        return s;
    };
    s.psi_v = last.cusp_value;
    s.psi_unit = boundary_to_unit(cfg.base, last.cusp_value);
    s.label = d.excursions.iter().rev().filter(|e| !e.empty).find_map(|e| e.cusp);
    s.coding_value = cf_value(&c.coefficients).ok();
    s.round_trip = round_trip(&d, &c, s.label);
    s.recurrent = !c.is_empty();
    s.coding = c;
    s
}

/// Estimates of `ψ(v)` for every sampled direction, integrating each ray
/// up to time `T`.
pub fn psi_samples(cfg: &ExperimentConfig) -> Result<Vec<PsiSample>, StatsError> {
    cfg.validate()?;
    let angles = sample_directions(cfg);
    Ok(angles.par_iter().enumerate().map(|(i, &a)| psi_sample(cfg, i, a)).collect())
}

pub fn psi_csv(samples: &[PsiSample]) -> String {
    let mut out = String::from(PSI_CSV_HEADER);
    out.push('\n');
    for s in samples {
        out.push_str(&s.csv_row());
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CircularOrder {
    pub samples: usize,
    /// Cyclic descents of `ψ` listed in the cyclic order of `v`.
    pub descents: usize,
    pub monotone: bool,
}

/// Whether `ψ` preserves the cyclic order of the sampled directions. Ties
/// count as order-preserving.
pub fn circular_order(samples: &[PsiSample]) -> CircularOrder {
    let mut pts: Vec<(f64, f64)> = samples.iter().filter(|s| s.recurrent).map(|s| (angle_to_unit(s.angle), s.psi_unit)).collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let n = pts.len();
    let descents = (0..n).filter(|&i| pts[(i + 1) % n].1 < pts[i].1).count();
    CircularOrder { samples: n, descents, monotone: n < 3 || descents <= 1 }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoundTripSummary {
    pub compared: usize,
    pub within_one: usize,
    pub exact: usize,
    pub fraction_within_one: f64,
}

pub fn round_trip_summary(samples: &[PsiSample]) -> RoundTripSummary {
    let (mut compared, mut within_one, mut exact) = (0, 0, 0);
    for s in samples {
        compared += s.round_trip.compared;
        within_one += s.round_trip.within_one;
        exact += s.round_trip.exact;
    }
    let fraction_within_one = if compared == 0 { 0.0 } else { within_one as f64 / compared as f64 };
    RoundTripSummary { compared, within_one, exact, fraction_within_one }
}

/// Kolmogorov–Smirnov distance to the uniform law on `[0,1)` of the mixture
/// of uniform laws on `intervals` (degenerate intervals are atoms).
pub fn smoothed_ks(intervals: &[(f64, f64)]) -> f64 {
    let n = intervals.len() as f64;
    // (position, slope change, jump)
    let mut ev: Vec<(f64, f64, f64)> = vec![];
    for &(a, b) in intervals {
        if b > a {
            let s = 1.0 / (n * (b - a));
            ev.push((a, s, 0.0));
            ev.push((b, -s, 0.0));
        } else {
            ev.push((a, 0.0, 1.0 / n));
        }
    }
    ev.sort_by(|x, y| x.0.total_cmp(&y.0));
    let (mut f, mut slope, mut at, mut ks) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    let mut i = 0;
    while i < ev.len() {
        let x = ev[i].0;
        f += slope * (x - at);
        at = x;
        ks = ks.max((f - x).abs());
        while i < ev.len() && ev[i].0 == x {
            slope += ev[i].1;
            f += ev[i].2;
            i += 1;
        }
        ks = ks.max((f - x).abs());
    }
    ks.max((f + slope * (1.0 - at) - 1.0).abs())
}

/// Fraction of the points falling in the `10%` of equal bins holding the
/// most points.
pub fn top_decile_mass(points: &[f64], bins: usize) -> f64 {
    let mut counts = vec![0usize; bins];
    for &u in points {
        counts[((u * bins as f64) as usize).min(bins - 1)] += 1;
    }
    counts.sort_unstable_by(|a, b| b.cmp(a));
    let top = (bins / 10).max(1);
    counts[..top].iter().sum::<usize>() as f64 / points.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsRow {
    pub depth: usize,
    pub ks: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// `1.36/√n`, the 5% critical value of the one-sample test.
    pub null_critical: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConcentrationRow {
    pub bins: usize,
    pub top_decile_mass: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SingularityReport {
    pub label: String,
    pub samples: usize,
    pub bootstrap: usize,
    pub ks: Vec<KsRow>,
    pub concentration: Vec<ConcentrationRow>,
    /// `KS` never drops by more than the combined bootstrap half-widths.
    pub ks_non_decreasing: bool,
}

/// Distribution of `ψ` pushed forward from uniform directions, against the
/// uniform law. At depth `K` each sample is spread uniformly over its depth-`K`
/// cylinder, so the statistic resolves the measure down to that scale.
pub fn singularity_diagnostic(samples: &[PsiSample], base: UHPoint, depths: &[usize], bins: &[usize], bootstrap: usize, seed: u64) -> Result<SingularityReport, StatsError> {
    let rec: Vec<&PsiSample> = samples.iter().filter(|s| s.recurrent).collect();
    if rec.len() < MIN_DIAGNOSTIC_SAMPLES {
        return Err(StatsError::TooFewSamples { needed: MIN_DIAGNOSTIC_SAMPLES, got: rec.len() });
    }
    let n = rec.len();
    let mut ks = vec![];
    for &depth in depths {
        let cyl: Vec<(f64, f64)> = rec.iter().map(|s| s.cylinder(base, depth)).collect();
        let stat = smoothed_ks(&cyl);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(depth as u64);
        let mut boot: Vec<f64> = (0..bootstrap)
            .map(|_| {
                let pick: Vec<(f64, f64)> = (0..n).map(|_| cyl[rng.gen_range(0..n)]).collect();
                smoothed_ks(&pick)
            })
            .collect();
        boot.sort_by(f64::total_cmp);
        let (lo, hi) = if boot.is_empty() { (stat, stat) } else { (boot[(0.025 * bootstrap as f64) as usize], boot[((0.975 * bootstrap as f64) as usize).min(bootstrap - 1)]) };
        ks.push(KsRow { depth, ks: stat, ci_low: lo, ci_high: hi, null_critical: 1.36 / (n as f64).sqrt() });
    }
    let ks_non_decreasing = ks.windows(2).all(|w| w[1].ks >= w[0].ks - ((w[0].ci_high - w[0].ci_low) + (w[1].ci_high - w[1].ci_low)) / 2.0);
    let points: Vec<f64> = rec.iter().map(|s| s.psi_unit).collect();
    let concentration = bins.iter().map(|&b| ConcentrationRow { bins: b, top_decile_mass: top_decile_mass(&points, b) }).collect();
    Ok(SingularityReport { label: DIAGNOSTIC_LABEL.into(), samples: n, bootstrap, ks, concentration, ks_non_decreasing })
}
