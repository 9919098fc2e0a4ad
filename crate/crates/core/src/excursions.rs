//! Thick-thin decomposition, winding numbers and continued-fraction coding.

use crate::integrator::Trajectory;
use crate::metrics::{chart_factor, hyperbolic_distance, MetricId};
use crate::modular_group::{cusp_of, Cusp, GroupElement, GroupError, UHPoint};
use num_bigint::BigUint;
use num_integer::Integer;
use num_traits::{ToPrimitive, Zero};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Ambient gap below which an exit and re-entry of the same horoball are
/// merged into one excursion.
pub const DEFAULT_MERGE_GAP: f64 = 0.1;

pub const EXCURSION_CSV_HEADER: &str = "cusp_p,cusp_q,entry_time,exit_time,depth,winding";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExcursionError {
    #[error("trajectory {0} lies inside a horoball")]
    EndpointInside(&'static str),
    #[error("excursion at sample {0} does not stay at one cusp")]
    CuspChange(usize),
    #[error("empty coefficient sequence")]
    EmptySequence,
    #[error("trajectory has no samples")]
    EmptyTrajectory,
    #[error(transparent)]
    Group(#[from] GroupError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExcursionRecord {
    /// Exact cusp label; `None` once the chart no longer fits in `i64`.
    pub cusp: Option<Cusp>,
    /// Floating-point value of the cusp label (`∞` for the cusp at infinity).
    pub cusp_value: f64,
    pub entry_time: f64,
    pub exit_time: f64,
    /// `√y_max` in cusp-normalised coordinates.
    pub depth: f64,
    /// `|Δx|` between entry and exit in cusp-normalised coordinates.
    pub winding: f64,
    /// Signed `Δx`.
    pub displacement: f64,
    pub empty: bool,
    pub entry_index: usize,
    pub exit_index: usize,
    pub apex_index: usize,
}

impl ExcursionRecord {
    /// Placeholder for an excursion seen only on the other side of a
    /// comparison.
    pub fn empty_at(cusp: Option<Cusp>, cusp_value: f64, time: f64) -> Self {
        ExcursionRecord {
            cusp,
            cusp_value,
            entry_time: time,
            exit_time: time,
            depth: 1.0,
            winding: 0.0,
            displacement: 0.0,
            empty: true,
            entry_index: 0,
            exit_index: 0,
            apex_index: 0,
        }
    }

    pub fn apex_height(&self) -> f64 {
        self.depth * self.depth
    }

    pub fn csv_row(&self) -> String {
        let (p, q) = self.cusp.map_or((String::new(), String::new()), |c| (c.p.to_string(), c.q.to_string()));
        format!("{p},{q},{},{},{},{}", self.entry_time, self.exit_time, self.depth, self.winding)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThickSegment {
    pub start_index: usize,
    pub end_index: usize,
    pub start_time: f64,
    pub end_time: f64,
}

/// `thick[0], excursions[0], thick[1], …, excursions[k-1], thick[k]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThickThinDecomposition {
    pub metric: MetricId,
    pub horoball_height: f64,
    pub thick: Vec<ThickSegment>,
    pub excursions: Vec<ExcursionRecord>,
}

impl ThickThinDecomposition {
    pub fn count(&self) -> usize {
        self.excursions.iter().filter(|e| !e.empty).count()
    }

    pub fn start_time(&self) -> f64 {
        self.thick[0].start_time
    }

    pub fn end_time(&self) -> f64 {
        self.thick.last().expect("at least one thick segment").end_time
    }
}

fn cusp_info(traj: &Trajectory, i: usize) -> (Option<Cusp>, f64) {
    let chart = traj.chart_of(i);
    (chart.exact.map(|g| cusp_of(&g)), chart.approx.cusp_value())
}

/// Signed `Δx` from sample `a` to sample `b` measured in the chart of `a`;
/// `None` if the two charts are not related by a translation.
fn displacement(traj: &Trajectory, a: usize, b: usize) -> Result<Option<f64>, GroupError> {
    let rel = traj.relative_chart(a, b)?;
    Ok(rel.as_translation().map(|n| traj.samples[b].z.x - n as f64 - traj.samples[a].z.x))
}

fn gap_distance(traj: &Trajectory, exit: usize, entry: usize) -> Result<Option<f64>, GroupError> {
    let rel = traj.relative_chart(exit, entry)?;
    Ok(rel.as_translation().map(|n| {
        let z = traj.samples[exit].z;
        hyperbolic_distance(UHPoint { x: z.x + n as f64, y: z.y }, traj.samples[entry].z)
    }))
}

/// Raw runs of samples above height `h`: (entry index, exit index).
fn runs(traj: &Trajectory, h: f64, upto: usize) -> Vec<(usize, usize)> {
    let mut out = vec![];
    let mut open: Option<usize> = None;
    for i in 0..=upto {
        let inside = traj.samples[i].z.y > h;
        match (open, inside) {
            (None, true) => open = Some(i),
            (Some(e), false) => {
                out.push((e, i));
                open = None;
            }
            _ => {}
        }
    }
    out
}

fn decompose_range(traj: &Trajectory, h: f64, merge_gap: f64, last: usize) -> Result<ThickThinDecomposition, ExcursionError> {
    let mut merged: Vec<(usize, usize)> = vec![];
    for (entry, exit) in runs(traj, h, last) {
        if let Some(prev) = merged.last_mut() {
            if let Some(d) = gap_distance(traj, prev.1, entry)? {
                if d < merge_gap {
                    prev.1 = exit;
                    continue;
                }
            }
        }
        merged.push((entry, exit));
    }
    let mut excursions = Vec::with_capacity(merged.len());
    for &(entry, exit) in &merged {
        let apex = (entry..exit).max_by(|&a, &b| traj.samples[a].z.y.total_cmp(&traj.samples[b].z.y)).expect("non-empty run");
        let dx = displacement(traj, entry, exit)?.ok_or(ExcursionError::CuspChange(entry))?;
        let (cusp, cusp_value) = cusp_info(traj, apex);
        excursions.push(ExcursionRecord {
            cusp,
            cusp_value,
            entry_time: traj.samples[entry].t,
            exit_time: traj.samples[exit].t,
            depth: traj.samples[apex].z.y.sqrt(),
            winding: dx.abs(),
            displacement: dx,
            empty: false,
            entry_index: entry,
            exit_index: exit,
            apex_index: apex,
        });
    }
    let mut bounds = vec![0];
    for &(entry, exit) in &merged {
        bounds.push(entry);
        bounds.push(exit);
    }
    bounds.push(last);
    let thick = bounds
        .chunks(2)
        .map(|c| ThickSegment { start_index: c[0], end_index: c[1], start_time: traj.samples[c[0]].t, end_time: traj.samples[c[1]].t })
        .collect();
    Ok(ThickThinDecomposition { metric: traj.metric, horoball_height: h, thick, excursions })
}

/// Splits a trajectory with thick endpoints at the horocycle height `h`.
///
/// Each excursion runs from its first sample above `h` to the first sample
/// back below; thick segments are the closed sample ranges between, so
/// they share their end samples with the neighbouring excursions.
pub fn thick_thin_decompose(traj: &Trajectory, h: f64, merge_gap: f64) -> Result<ThickThinDecomposition, ExcursionError> {
    if traj.is_empty() {
        return Err(ExcursionError::EmptyTrajectory);
    }
    if traj.samples[0].z.y > h {
        return Err(ExcursionError::EndpointInside("start"));
    }
    let last = traj.len() - 1;
    if traj.samples[last].z.y > h {
        return Err(ExcursionError::EndpointInside("end"));
    }
    decompose_range(traj, h, merge_gap, last)
}

/// Decomposes a ray up to its last recurrence, discarding a trailing
/// unfinished excursion.
pub fn decompose_ray(traj: &Trajectory, h: f64, merge_gap: f64) -> Result<ThickThinDecomposition, ExcursionError> {
    if traj.is_empty() {
        return Err(ExcursionError::EmptyTrajectory);
    }
    if traj.samples[0].z.y > h {
        return Err(ExcursionError::EndpointInside("start"));
    }
    let last = (0..traj.len()).rev().find(|&i| traj.samples[i].z.y <= h).expect("start is thick");
    decompose_range(traj, h, merge_gap, last)
}

pub fn excursion_winding(e: &ExcursionRecord, traj: &Trajectory) -> Result<f64, ExcursionError> {
    if e.empty {
        return Ok(0.0);
    }
    Ok(displacement(traj, e.entry_index, e.exit_index)?.ok_or(ExcursionError::CuspChange(e.entry_index))?.abs())
}

/// Coefficient of an excursion whose chord at height `h` has width `w`.
///
/// A hyperbolic geodesic crossing the horocycle `y = h` with chord `w` has
/// endpoint width `W = √(w² + 4h²)`, and `W` lies strictly between the
/// coefficient and the coefficient plus two.
pub fn coefficient_from_winding(w: f64, h: f64) -> u64 {
    coefficient_from_width((w * w + 4.0 * h * h).sqrt())
}

pub fn coefficient_from_width(width: f64) -> u64 {
    (width - 1.0).round().max(1.0) as u64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CodingSource {
    WpExcursion,
    HypExcursion,
    GaussMap,
}

impl CodingSource {
    pub fn for_metric(m: MetricId) -> Self {
        match m {
            MetricId::Hyperbolic => CodingSource::HypExcursion,
            MetricId::WpModel => CodingSource::WpExcursion,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodingSequence {
    pub coefficients: Vec<u64>,
    pub source: CodingSource,
    /// For excursion codings: the excursion each coefficient came from, or
    /// `None` for a coefficient inferred between two excursions.
    pub origin: Vec<Option<usize>>,
}

impl CodingSequence {
    pub fn from_coefficients(coefficients: Vec<u64>, source: CodingSource) -> Self {
        CodingSequence { coefficients, source, origin: vec![] }
    }

    pub fn len(&self) -> usize {
        self.coefficients.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coefficients.is_empty()
    }

    /// Position of the coefficient produced by excursion `j`.
    pub fn position_of(&self, j: usize) -> Option<usize> {
        self.origin.iter().position(|o| *o == Some(j))
    }
}

/// Canonical continued fraction of `p/q` (`q > 0`): `[b0; b1, …, bm]`.
pub fn rational_cf(p: i128, q: i128) -> Vec<i128> {
    let (mut a, mut b) = (p, q);
    let mut out = vec![];
    while b != 0 {
        let f = a.div_euclid(b);
        out.push(f);
        let r = a - f * b;
        a = b;
        b = r;
    }
    out
}

/// Coefficients that lie between consecutive excursions `a` and `b`, read
/// off the position of the next cusp in the chart of the current one.
///
/// The label is a convergent of the forward endpoint seen from `a`. Its
/// parity (below or above the endpoint) follows from whether `b` winds the
/// same way as `a`, which fixes the choice between the two expansions of
/// the label.
fn intermediate(traj: &Trajectory, a: &ExcursionRecord, b: &ExcursionRecord) -> Result<Vec<u64>, ExcursionError> {
    let rel = traj.relative_chart(a.apex_index, b.apex_index)?;
    let label = cusp_of(&rel);
    let p = if a.displacement < 0.0 { -label.p } else { label.p };
    let mut cf = rational_cf(p as i128, label.q as i128);
    let above = (a.displacement < 0.0) == (b.displacement < 0.0);
    let m = cf.len() - 1;
    if (m % 2 == 1) != above {
        let last = cf.pop().expect("non-empty expansion");
        cf.extend_from_slice(&[last - 1, 1]);
    }
    Ok(cf[1..].iter().filter(|&&c| c > 0).map(|&c| c as u64).collect())
}

/// Coding of a decomposition: one coefficient per excursion, plus the
/// coefficients of shallow cusps passed between consecutive excursions.
pub fn coding(traj: &Trajectory, d: &ThickThinDecomposition) -> Result<CodingSequence, ExcursionError> {
    let mut coefficients = vec![];
    let mut origin = vec![];
    let real: Vec<usize> = (0..d.excursions.len()).filter(|&j| !d.excursions[j].empty).collect();
    for (k, &j) in real.iter().enumerate() {
        coefficients.push(coefficient_from_winding(d.excursions[j].winding, d.horoball_height));
        origin.push(Some(j));
        if k + 1 < real.len() {
            for c in intermediate(traj, &d.excursions[j], &d.excursions[real[k + 1]])? {
                coefficients.push(c);
                origin.push(None);
            }
        }
    }
    Ok(CodingSequence { coefficients, source: CodingSource::for_metric(d.metric), origin })
}

/// Continued fraction of `theta ∈ (0,1)` by the Gauss map, stopping once
/// the propagated rounding error becomes significant.
pub fn gauss_cf(theta: f64, k: usize) -> CodingSequence {
    let mut x = theta;
    let mut err = f64::EPSILON * theta.abs();
    let mut out = vec![];
    while out.len() < k {
        if !(x > 0.0) || err > 1e-3 * x {
            break;
        }
        let inv = 1.0 / x;
        let a = inv.floor();
        // d(1/x) = dx / x²
        err = err / (x * x) + f64::EPSILON * inv;
        out.push(a as u64);
        x = inv - a;
        if x < err {
            break;
        }
    }
    CodingSequence::from_coefficients(out, CodingSource::GaussMap)
}

/// Exact continued fraction of `num/den`, first `k` coefficients after the
/// integer part.
///
/// Lehmer's method: runs of quotients are read off the leading 63 bits and
/// applied to the full numbers as one 2x2 matrix.
pub fn exact_cf(num: &BigUint, den: &BigUint, k: usize) -> Vec<u64> {
    let (mut u, mut v) = (den.clone(), num % den);
    let mut out = Vec::with_capacity(k.min(1 << 16));
    while out.len() < k && !v.is_zero() {
        let bits = u.bits();
        if bits <= 126 {
            let (mut x, mut y) = (u.to_u128().expect("fits"), v.to_u128().expect("fits"));
            while out.len() < k && y != 0 {
                out.push((x / y).min(u64::MAX as u128) as u64);
                (x, y) = (y, x % y);
            }
            break;
        }
        let shift = bits - 63;
        let mut x = (&u >> shift).to_i128().expect("63 bits");
        let mut y = (&v >> shift).to_i128().expect("63 bits");
        let (mut a, mut b, mut c, mut d) = (1i128, 0i128, 0i128, 1i128);
        let start = out.len();
        while out.len() < k && y + c != 0 && y + d != 0 {
            let q = (x + a) / (y + c);
            if q != (x + b) / (y + d) {
                break;
            }
            out.push(q as u64);
            (a, c) = (c, a - q * c);
            (b, d) = (d, b - q * d);
            (x, y) = (y, x - q * y);
        }
        if out.len() == start {
            let (q, r) = u.div_rem(&v);
            out.push(q.to_u64().unwrap_or(u64::MAX));
            u = v;
            v = r;
        } else {
            let lin = |p: i128, q: i128| -> BigUint {
                // exactly one of p, q is negative unless the other is zero
                if p >= 0 && q <= 0 {
                    &u * p.unsigned_abs() - &v * q.unsigned_abs()
                } else {
                    &v * q.unsigned_abs() - &u * p.unsigned_abs()
                }
            };
            (u, v) = (lin(a, b), lin(c, d));
        }
    }
    out
}

/// Exact continued fraction of an `f64` in `(0,1)` (a dyadic rational).
pub fn f64_cf(theta: f64, k: usize) -> Vec<u64> {
    let bits = theta.to_bits();
    let exp = ((bits >> 52) & 0x7ff) as i32;
    let mant = (bits & ((1u64 << 52) - 1)) | if exp > 0 { 1u64 << 52 } else { 0 };
    let shift = 1075 - exp.max(1);
    let num = BigUint::from(mant);
    let den = BigUint::from(1u8) << shift as usize;
    exact_cf(&num, &den, k)
}

/// Value of `[0; a1, a2, …]` by backward recurrence.
pub fn cf_value(c: &[u64]) -> Result<f64, ExcursionError> {
    if c.is_empty() {
        return Err(ExcursionError::EmptySequence);
    }
    let mut x = 0.0;
    for &a in c.iter().rev() {
        x = 1.0 / (a as f64 + x);
    }
    Ok(x)
}

/// Convergents `p_n/q_n` of `[0; a1, …]`, starting with `0/1`; stops
/// before overflow.
pub fn convergents(c: &[u64]) -> Vec<(i128, i128)> {
    let (mut p0, mut q0, mut p1, mut q1) = (1i128, 0i128, 0i128, 1i128);
    let mut out = vec![(0, 1)];
    for &a in c {
        let a = a as i128;
        let (Some(p), Some(q)) = (a.checked_mul(p1).and_then(|v| v.checked_add(p0)), a.checked_mul(q1).and_then(|v| v.checked_add(q0))) else {
            break;
        };
        if q > i64::MAX as i128 {
            break;
        }
        out.push((p, q));
        (p0, q0, p1, q1) = (p1, q1, p, q);
    }
    out
}

/// One coding coefficient paired with the oracle coefficient at the same
/// continued-fraction position.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlignedCoefficient {
    /// Zero-based position in the oracle expansion.
    pub index: usize,
    pub coding: u64,
    pub oracle: u64,
    pub inferred: bool,
}

/// Aligns an excursion coding with the expansion `[0; a1, a2, …]` of the
/// ray's endpoint. An excursion at the convergent `p_n/q_n` carries
/// `a_{n+1}`; positions between anchored excursions follow the coding order.
/// The first and last coding coefficients are dropped.
pub fn align_with_expansion(d: &ThickThinDecomposition, c: &CodingSequence, expansion: &[u64]) -> Vec<AlignedCoefficient> {
    align_with_point(d, c, 0, expansion)
}

/// As [`align_with_expansion`] for the endpoint `[b0; a1, a2, …]`.
pub fn align_with_point(d: &ThickThinDecomposition, c: &CodingSequence, integer_part: i64, expansion: &[u64]) -> Vec<AlignedCoefficient> {
    let b0 = integer_part as i128;
    let conv: Vec<(i128, i128)> = convergents(expansion).into_iter().map(|(p, q)| (p + b0 * q, q)).collect();
    let anchor = |k: usize| -> Option<usize> {
        let j = c.origin.get(k).copied().flatten()?;
        let cusp = d.excursions[j].cusp?;
        conv.iter().position(|&(p, q)| p == cusp.p as i128 && q == cusp.q as i128)
    };
    let anchors: Vec<(usize, usize)> = (0..c.len()).filter_map(|k| anchor(k).map(|n| (k, n))).collect();
    let Some(&(k0, n0)) = anchors.first() else {
        return vec![];
    };
    let mut offset = n0 as i64 - k0 as i64;
    let mut next = 0;
    let mut out = vec![];
    for k in 0..c.len() {
        if next < anchors.len() && anchors[next].0 == k {
            offset = anchors[next].1 as i64 - k as i64;
            next += 1;
        }
        if k == 0 || k + 1 == c.len() {
            continue;
        }
        let idx = k as i64 + offset;
        if idx >= 0 && (idx as usize) < expansion.len() {
            out.push(AlignedCoefficient {
                index: idx as usize,
                coding: c.coefficients[k],
                oracle: expansion[idx as usize],
                inferred: c.origin.get(k).copied().flatten().is_none(),
            });
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ProjectedPiece {
    Thick { start_index: usize, end_index: usize },
    /// Horocyclic arc at height `h` in the chart of the excursion entry.
    Horocycle { chart: Option<GroupElement>, x0: f64, x1: f64, height: f64, length: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectedPath {
    pub metric: MetricId,
    pub pieces: Vec<ProjectedPiece>,
}

impl ProjectedPath {
    pub fn horocyclic_length(&self) -> f64 {
        self.pieces
            .iter()
            .map(|p| match p {
                ProjectedPiece::Horocycle { length, .. } => *length,
                _ => 0.0,
            })
            .sum()
    }
}

/// Reduced point pushed down to the horocycle at height `h`.
pub fn project_point(z: UHPoint, h: f64) -> UHPoint {
    UHPoint { x: z.x, y: z.y.min(h) }
}

/// Replaces every excursion by the horocyclic arc joining its entry and
/// exit points.
pub fn project_to_thick(traj: &Trajectory, d: &ThickThinDecomposition) -> ProjectedPath {
    let h = d.horoball_height;
    let factor = chart_factor(traj.metric, UHPoint { x: 0.0, y: h });
    let mut pieces = vec![];
    for (i, t) in d.thick.iter().enumerate() {
        pieces.push(ProjectedPiece::Thick { start_index: t.start_index, end_index: t.end_index });
        if let Some(e) = d.excursions.get(i) {
            if e.empty {
                continue;
            }
            let x0 = traj.samples[e.entry_index].z.x;
            pieces.push(ProjectedPiece::Horocycle {
                chart: traj.chart_of(e.entry_index).exact,
                x0,
                x1: x0 + e.displacement,
                height: h,
                length: e.winding * factor,
            });
        }
    }
    ProjectedPath { metric: traj.metric, pieces }
}

pub fn excursion_csv(d: &ThickThinDecomposition) -> String {
    let mut s = String::from(EXCURSION_CSV_HEADER);
    s.push('\n');
    for e in &d.excursions {
        s.push_str(&e.csv_row());
        s.push('\n');
    }
    s
}
