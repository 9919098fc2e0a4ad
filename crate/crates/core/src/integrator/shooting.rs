//! Two-point geodesic segments by multiple shooting.
//!
//! The segment is split into `M` pieces of equal metric length `τ`. The
//! unknowns are the initial angle at `p`, `ln τ`, and for each interior
//! node a position offset and a direction. Residuals are junction
//! mismatches expressed in the fixed chart of the next node, so they are
//! smooth in the unknowns. Newton's method with a finite-difference
//! Jacobian and a backtracking line search solves the system.
//!
//! Hyperbolic segments are seeded from the closed form. WP segments are
//! reached by continuation in the chart exponent, starting from the
//! hyperbolic solution.

use super::{hyperbolic_closed_form, ClosedFormArc, Chart, Integrator, IntegrationError, SampleKind, StopRule, Tolerances, Trajectory};
use crate::metrics::{hyperbolic_distance, lift_distance, MetricId, MetricParams};
use crate::modular_group::{reduce, GroupElement, GroupError, Lift, UHPoint};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentBV {
    pub p: Lift,
    pub q: Lift,
    pub metric: MetricId,
    pub trajectory: Trajectory,
    /// Largest junction or endpoint mismatch (ambient hyperbolic distance,
    /// angles in radians).
    pub residual: f64,
    pub initial_angle: f64,
    pub length: f64,
    pub pieces: usize,
    pub newton_iterations: usize,
}

#[derive(Debug, Clone, Copy)]
struct Node {
    chart: GroupElement,
    base: UHPoint,
}

struct Problem {
    integ: Integrator,
    p: Lift,
    q: Lift,
    nodes: Vec<Node>,
}

fn wrap(a: f64) -> f64 {
    let r = (a + PI).rem_euclid(2.0 * PI) - PI;
    if r <= -PI {
        r + 2.0 * PI
    } else {
        r
    }
}

fn relative(target: &GroupElement, from: &GroupElement) -> Result<GroupElement, GroupError> {
    target.compose(&from.inverse())
}

impl Problem {
    fn pieces(&self) -> usize {
        self.nodes.len()
    }

    fn dim(&self) -> usize {
        3 * (self.pieces() - 1) + 2
    }

    fn tau(&self, x: &[f64]) -> f64 {
        x[1].exp()
    }

    /// Start lift and chart angle of piece `i`.
    fn start(&self, i: usize, x: &[f64]) -> (Lift, f64) {
        if i == 0 {
            return (self.p, x[0]);
        }
        let n = &self.nodes[i];
        let j = 2 + 3 * (i - 1);
        let local = UHPoint { x: n.base.x + n.base.y * x[j], y: n.base.y * x[j + 1].exp() };
        (Lift { chart: n.chart, local }, x[j + 2])
    }

    fn piece(&self, i: usize, x: &[f64]) -> Result<Trajectory, IntegrationError> {
        let (start, angle) = self.start(i, x);
        self.integ.run_angle(start, angle, StopRule::Duration(self.tau(x)))
    }

    /// End state of a piece expressed in chart `target`.
    fn end_in(traj: &Trajectory, target: &GroupElement) -> Result<(UHPoint, (f64, f64)), IntegrationError> {
        let last = traj.len() - 1;
        let chart = traj.chart_of(last).exact.ok_or(GroupError::Overflow)?;
        let rel = relative(target, &chart)?;
        let s = &traj.samples[last];
        Ok((rel.apply(s.z), rel.push_vector(s.z, s.v)))
    }

    fn block(&self, i: usize, traj: &Trajectory, x: &[f64]) -> Result<Vec<f64>, IntegrationError> {
        if i + 1 < self.pieces() {
            let (node, angle) = self.start(i + 1, x);
            let (z, v) = Self::end_in(traj, &node.chart)?;
            let n = node.local;
            Ok(vec![(z.x - n.x) / n.y, (z.y / n.y).ln(), wrap(v.1.atan2(v.0) - angle)])
        } else {
            let (z, _) = Self::end_in(traj, &self.q.chart)?;
            let n = self.q.local;
            Ok(vec![(z.x - n.x) / n.y, (z.y / n.y).ln()])
        }
    }

    fn offset(i: usize) -> usize {
        3 * i
    }

    fn evaluate(&self, x: &[f64]) -> Result<(Vec<Trajectory>, Vec<f64>), IntegrationError> {
        let mut trajs = Vec::with_capacity(self.pieces());
        let mut r = vec![0.0; self.dim()];
        for i in 0..self.pieces() {
            let t = self.piece(i, x)?;
            let b = self.block(i, &t, x)?;
            r[Self::offset(i)..Self::offset(i) + b.len()].copy_from_slice(&b);
            trajs.push(t);
        }
        Ok((trajs, r))
    }

    /// Pieces whose residual block depends on unknown `j`, and whether the
    /// piece itself must be re-integrated.
    fn dependents(&self, j: usize) -> Vec<(usize, bool)> {
        match j {
            0 => vec![(0, true)],
            1 => (0..self.pieces()).map(|i| (i, true)).collect(),
            _ => {
                let node = 1 + (j - 2) / 3;
                vec![(node - 1, false), (node, true)]
            }
        }
    }

    fn jacobian(&self, x: &[f64], trajs: &[Trajectory], r: &[f64]) -> Result<DMatrix<f64>, IntegrationError> {
        let n = self.dim();
        let mut jac = DMatrix::zeros(n, n);
        for j in 0..n {
            let h = 1e-6;
            let mut xp = x.to_vec();
            xp[j] += h;
            for (i, reintegrate) in self.dependents(j) {
                let fresh;
                let t = if reintegrate {
                    fresh = self.piece(i, &xp)?;
                    &fresh
                } else {
                    &trajs[i]
                };
                let b = self.block(i, t, &xp)?;
                for (k, bk) in b.iter().enumerate() {
                    let row = Self::offset(i) + k;
                    jac[(row, j)] = (bk - r[row]) / h;
                }
            }
        }
        Ok(jac)
    }

    /// Newton iteration; returns the solution, its pieces and the
    /// iteration count.
    fn solve(&self, mut x: Vec<f64>, tol: &Tolerances) -> Result<(Vec<f64>, Vec<Trajectory>, usize), IntegrationError> {
        let (mut trajs, mut r) = self.evaluate(&x)?;
        let norm = |v: &[f64]| v.iter().fold(0.0f64, |m, a| m.max(a.abs()));
        let mut rn = norm(&r);
        let target = 1e-3 * tol.bv_residual;
        for it in 0..tol.max_newton {
            if rn <= target {
                return Ok((x, trajs, it));
            }
            let jac = self.jacobian(&x, &trajs, &r)?;
            let rhs = DVector::from_iterator(r.len(), r.iter().map(|a| -a));
            let delta = match jac.clone().lu().solve(&rhs) {
                Some(d) if d.iter().all(|a| a.is_finite()) => d,
                _ => {
                    let jt = jac.transpose();
                    let mut a = &jt * &jac;
                    for k in 0..a.nrows() {
                        a[(k, k)] += 1e-8 * (1.0 + a[(k, k)]);
                    }
                    a.lu().solve(&(&jt * &rhs)).ok_or(IntegrationError::ResidualNotAchieved { residual: rn, iterations: it })?
                }
            };
            let big = delta.iter().fold(0.0f64, |m, a| m.max(a.abs()));
            let mut alpha = if big > 0.5 { 0.5 / big } else { 1.0 };
            let mut accepted = false;
            for _ in 0..30 {
                let xt: Vec<f64> = x.iter().zip(delta.iter()).map(|(a, d)| a + alpha * d).collect();
                if let Ok((tt, rt)) = self.evaluate(&xt) {
                    let nt = norm(&rt);
                    if nt < rn || nt <= target {
                        x = xt;
                        trajs = tt;
                        r = rt;
                        rn = nt;
                        accepted = true;
                        break;
                    }
                }
                alpha *= 0.5;
            }
            if !accepted {
                return Err(IntegrationError::ResidualNotAchieved { residual: rn, iterations: it });
            }
        }
        if rn <= target.max(1e-2 * tol.bv_residual) {
            return Ok((x, trajs, tol.max_newton));
        }
        Err(IntegrationError::ResidualNotAchieved { residual: rn, iterations: tol.max_newton })
    }

    /// Mismatches of the converged solution in hyperbolic distance.
    fn mismatch(&self, x: &[f64], trajs: &[Trajectory]) -> Result<f64, IntegrationError> {
        let mut worst = 0.0f64;
        for (i, t) in trajs.iter().enumerate() {
            if i + 1 < self.pieces() {
                let (node, angle) = self.start(i + 1, x);
                let (z, v) = Self::end_in(t, &node.chart)?;
                worst = worst.max(hyperbolic_distance(z, node.local)).max(wrap(v.1.atan2(v.0) - angle).abs());
            } else {
                let (z, _) = Self::end_in(t, &self.q.chart)?;
                worst = worst.max(hyperbolic_distance(z, self.q.local));
            }
        }
        Ok(worst)
    }
}

/// Concatenates consecutive pieces into one trajectory.
fn concatenate(trajs: Vec<Trajectory>, metric: MetricId, h: f64) -> Result<Trajectory, IntegrationError> {
    let mut it = trajs.into_iter();
    let mut out = it.next().expect("at least one piece");
    out.metric = metric;
    for t in it {
        let t0 = out.samples.last().map_or(0.0, |s| s.t);
        let prev = *out.charts.last().expect("chart");
        let base = out.charts.len() as u32 - 1;
        let root = t.charts[0].exact.ok_or(GroupError::Overflow)?;
        let step = relative(&root, &prev.exact.ok_or(GroupError::Overflow)?)?;
        let joined = prev.advance(step);
        out.charts.push(Chart { exact: Some(root), ..joined });
        for c in &t.charts[1..] {
            let last = *out.charts.last().expect("chart");
            let mut next = last.advance(c.step);
            next.exact = c.exact;
            out.charts.push(next);
        }
        for s in t.samples.iter().skip(1) {
            let mut s = *s;
            s.t += t0;
            s.chart += base + 1;
            out.samples.push(s);
        }
        out.conserved_audit = out.conserved_audit.max(t.conserved_audit);
        out.cut_crossings += t.cut_crossings;
    }
    // events are re-derived from heights so that pieces starting inside a
    // horoball are handled consistently
    let mut inside = out.samples[0].z.y > h;
    out.recurrence_times = if inside { vec![] } else { vec![out.samples[0].t] };
    out.completed_excursions = 0;
    for s in out.samples.iter_mut().skip(1) {
        let now = s.z.y > h;
        if now && !inside {
            s.kind = SampleKind::Entry;
        } else if !now && inside {
            s.kind = SampleKind::Exit;
            out.recurrence_times.push(s.t);
            out.completed_excursions += 1;
        }
        inside = now;
    }
    Ok(out)
}

fn node_from(chart: &GroupElement, z: UHPoint, angle: f64) -> Result<(Node, f64), IntegrationError> {
    let (w, r) = reduce(z)?;
    let v = r.push_vector(z, (angle.cos(), angle.sin()));
    Ok((Node { chart: r.compose(chart)?, base: w }, v.1.atan2(v.0)))
}

fn arc_angle(arc: &ClosedFormArc, z: UHPoint) -> f64 {
    match arc.shape {
        super::ArcShape::Vertical { .. } => {
            if arc.q.y >= arc.p.y {
                PI / 2.0
            } else {
                -PI / 2.0
            }
        }
        super::ArcShape::Circle { center, .. } => {
            if arc.q.x > arc.p.x {
                (center - z.x).atan2(z.y)
            } else {
                (z.x - center).atan2(-z.y)
            }
        }
    }
}

/// Closed-form hyperbolic seed: nodes on the first half come from the arc
/// in the chart of `p`, nodes on the second half from the arc in the chart
/// of `q`, so each is computed where it is well resolved.
fn hyperbolic_seed(p: &Lift, q: &Lift, length: f64, pieces: usize) -> Result<(Vec<Node>, Vec<f64>), IntegrationError> {
    let q_in_p = relative(&p.chart, &q.chart)?.apply(q.local);
    let p_in_q = relative(&q.chart, &p.chart)?.apply(p.local);
    let fwd = hyperbolic_closed_form(p.local, q_in_p);
    let bwd = hyperbolic_closed_form(q.local, p_in_q);
    let tau = length / pieces as f64;
    let mut nodes = vec![Node { chart: p.chart, base: p.local }];
    let mut x = vec![arc_angle(&fwd, p.local), tau.ln()];
    for i in 1..pieces {
        let s = tau * i as f64;
        let (node, angle) = if s <= 0.5 * length {
            let z = fwd.point_at(s);
            node_from(&p.chart, z, arc_angle(&fwd, z))?
        } else {
            let z = bwd.point_at(length - s);
            node_from(&q.chart, z, arc_angle(&bwd, z) + PI)?
        };
        nodes.push(node);
        x.extend_from_slice(&[0.0, 0.0, angle]);
    }
    Ok((nodes, x))
}

fn finish(
    problem: &Problem,
    x: &[f64],
    trajs: Vec<Trajectory>,
    iterations: usize,
    metric: MetricId,
    tol: &Tolerances,
) -> Result<SegmentBV, IntegrationError> {
    let residual = problem.mismatch(x, &trajs)?;
    if !(residual <= tol.bv_residual) {
        return Err(IntegrationError::ResidualNotAchieved { residual, iterations });
    }
    let pieces = problem.pieces();
    let trajectory = concatenate(trajs, metric, problem.integ.params.horoball_height)?;
    Ok(SegmentBV {
        p: problem.p,
        q: problem.q,
        metric,
        length: problem.tau(x) * pieces as f64,
        trajectory,
        residual,
        initial_angle: x[0],
        pieces,
        newton_iterations: iterations,
    })
}

/// Geodesic segment between two lifts.
pub fn connect_lifts(m: MetricId, p: Lift, q: Lift, params: MetricParams, tol: Tolerances) -> Result<SegmentBV, IntegrationError> {
    let length = lift_distance(&p, &q);
    if !(length > 1e-12) {
        return Err(IntegrationError::DegenerateSegment);
    }
    let pieces = (length / tol.segment_length).ceil().max(1.0) as usize;
    let (nodes, x0) = hyperbolic_seed(&p, &q, length, pieces)?;
    let base = Integrator::new(MetricId::Hyperbolic, params, tol);
    let mut problem = Problem { integ: base, p, q, nodes };
    let (mut x, mut trajs, mut iterations) = problem.solve(x0, &tol)?;
    if m == MetricId::Hyperbolic {
        return finish(&problem, &x, trajs, iterations, m, &tol);
    }
    let target = m.exponent();
    let (mut k, mut dk) = (2.0, 0.25);
    while k < target {
        let next = (k + dk).min(target);
        problem.integ = Integrator::new(m, params, tol).with_exponent(next);
        match problem.solve(x.clone(), &tol) {
            Ok((xn, tn, it)) => {
                x = xn;
                trajs = tn;
                iterations += it;
                k = next;
                dk = (dk * 1.5).min(0.5);
            }
            Err(e) => {
                dk *= 0.5;
                if dk < 1.0 / 256.0 {
                    return Err(e);
                }
            }
        }
    }
    problem.integ = Integrator::new(m, params, tol);
    finish(&problem, &x, trajs, iterations, m, &tol)
}

/// Geodesic segment between two points given in global coordinates.
pub fn connect(m: MetricId, p: UHPoint, q: UHPoint, params: MetricParams, tol: Tolerances) -> Result<SegmentBV, IntegrationError> {
    let p = Lift::from_global(UHPoint::new(p.x, p.y)?)?;
    let q = Lift::from_global(UHPoint::new(q.x, q.y)?)?;
    connect_lifts(m, p, q, params, tol)
}
