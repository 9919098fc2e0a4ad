//! Exact arithmetic in PSL(2,Z) acting on the upper half-plane.
//!
//! Group elements carry integer entries and are composed with overflow
//! checks; points are plain `f64` pairs. Reduction into the standard
//! fundamental domain `{|Re z| <= 1/2, |z| >= 1}` keeps the exact
//! bookkeeping of which element did the reducing, which is what lets the
//! rest of the crate name cusps and horoballs exactly.

use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

/// Iteration cap for [`reduce`].
pub const REDUCTION_CAP: usize = 1_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GroupError {
    #[error("matrix [[{a}, {b}], [{c}, {d}]] does not have determinant 1")]
    NotUnimodular { a: i64, b: i64, c: i64, d: i64 },
    #[error("integer overflow composing group elements")]
    Overflow,
    #[error("point ({x}, {y}) is not in the upper half-plane")]
    NotInUpperHalfPlane { x: f64, y: f64 },
    #[error("reduction did not stabilise after {0} iterations")]
    ReductionCap(usize),
    #[error("horoball height {0} must exceed 1")]
    HoroballOverlap(f64),
    #[error("invalid cusp {p}/{q}")]
    InvalidCusp { p: i64, q: i64 },
}

/// A point `x + iy` with `y > 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UHPoint {
    pub x: f64,
    pub y: f64,
}

impl UHPoint {
    pub const I: UHPoint = UHPoint { x: 0.0, y: 1.0 };

    pub fn new(x: f64, y: f64) -> Result<Self, GroupError> {
        if y > 0.0 && y.is_finite() && x.is_finite() {
            Ok(UHPoint { x, y })
        } else {
            Err(GroupError::NotInUpperHalfPlane { x, y })
        }
    }

    pub fn norm_sqr(&self) -> f64 {
        self.x * self.x + self.y * self.y
    }
}

impl fmt::Display for UHPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}+{}i", self.x, self.y)
    }
}

/// An element of PSL(2,Z), stored with the sign convention that the first
/// nonzero entry of `(a, b, c, d)` is positive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GroupElement {
    pub a: i64,
    pub b: i64,
    pub c: i64,
    pub d: i64,
}

impl GroupElement {
    pub const IDENTITY: GroupElement = GroupElement { a: 1, b: 0, c: 0, d: 1 };
    /// `z -> z + 1`
    pub const T: GroupElement = GroupElement { a: 1, b: 1, c: 0, d: 1 };
    /// `z -> -1/z`
    pub const S: GroupElement = GroupElement { a: 0, b: 1, c: -1, d: 0 };

    pub fn new(a: i64, b: i64, c: i64, d: i64) -> Result<Self, GroupError> {
        let det = a as i128 * d as i128 - b as i128 * c as i128;
        if det != 1 {
            return Err(GroupError::NotUnimodular { a, b, c, d });
        }
        Ok(Self::canonical(a, b, c, d))
    }

    fn canonical(a: i64, b: i64, c: i64, d: i64) -> Self {
        let lead = [a, b, c, d].into_iter().find(|&e| e != 0).unwrap_or(1);
        if lead < 0 {
            GroupElement { a: -a, b: -b, c: -c, d: -d }
        } else {
            GroupElement { a, b, c, d }
        }
    }

    pub fn translation(n: i64) -> Self {
        GroupElement { a: 1, b: n, c: 0, d: 1 }
    }

    pub fn is_identity(&self) -> bool {
        *self == Self::IDENTITY
    }

    /// `Some(n)` when this element is `z -> z + n`.
    pub fn as_translation(&self) -> Option<i64> {
        (self.a == 1 && self.c == 0 && self.d == 1).then_some(self.b)
    }

    /// Matrix product `self * other`, i.e. apply `other` first.
    pub fn compose(&self, other: &GroupElement) -> Result<GroupElement, GroupError> {
        let m = |x: i64, y: i64, z: i64, w: i64| -> Result<i64, GroupError> {
            let v = x as i128 * y as i128 + z as i128 * w as i128;
            i64::try_from(v).map_err(|_| GroupError::Overflow)
        };
        let a = m(self.a, other.a, self.b, other.c)?;
        let b = m(self.a, other.b, self.b, other.d)?;
        let c = m(self.c, other.a, self.d, other.c)?;
        let d = m(self.c, other.b, self.d, other.d)?;
        Ok(Self::canonical(a, b, c, d))
    }

    pub fn inverse(&self) -> GroupElement {
        Self::canonical(self.d, -self.b, -self.c, self.a)
    }

    /// Möbius action `(az + b) / (cz + d)`.
    pub fn apply(&self, z: UHPoint) -> UHPoint {
        let (a, b, c, d) = (self.a as f64, self.b as f64, self.c as f64, self.d as f64);
        mobius_f64(a, b, c, d, z)
    }

    /// Complex derivative `1 / (cz + d)^2` as `(re, im)`.
    pub fn derivative(&self, z: UHPoint) -> (f64, f64) {
        let (c, d) = (self.c as f64, self.d as f64);
        let (re, im) = (c * z.x + d, c * z.y);
        // 1/(re + i im)^2
        let (sre, sim) = (re * re - im * im, 2.0 * re * im);
        let n = sre * sre + sim * sim;
        (sre / n, -sim / n)
    }

    /// Pushes a tangent vector at `z` forward by the action.
    pub fn push_vector(&self, z: UHPoint, v: (f64, f64)) -> (f64, f64) {
        let (dr, di) = self.derivative(z);
        (dr * v.0 - di * v.1, dr * v.1 + di * v.0)
    }

    pub fn to_f64(&self) -> [f64; 4] {
        [self.a as f64, self.b as f64, self.c as f64, self.d as f64]
    }
}

impl fmt::Display for GroupElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[[{}, {}], [{}, {}]]", self.a, self.b, self.c, self.d)
    }
}

fn mobius_f64(a: f64, b: f64, c: f64, d: f64, z: UHPoint) -> UHPoint {
    // (a z + b)(c zbar + d) / |cz + d|^2
    let den_re = c * z.x + d;
    let den_im = c * z.y;
    let den = den_re * den_re + den_im * den_im;
    let num_re = a * c * z.norm_sqr() + (a * d + b * c) * z.x + b * d;
    // unit determinant; forming ad - bc in floating point would cancel
    UHPoint { x: num_re / den, y: z.y / den }
}

pub fn apply_mobius(g: &GroupElement, z: UHPoint) -> UHPoint {
    g.apply(z)
}

/// A cusp `p/q` of the modular group; `q = 0` encodes `∞` and then `p = 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Cusp {
    pub p: i64,
    pub q: i64,
}

impl Cusp {
    pub const INFINITY: Cusp = Cusp { p: 1, q: 0 };

    pub fn new(p: i64, q: i64) -> Result<Self, GroupError> {
        if q < 0 {
            return Self::new(-p, -q);
        }
        if q == 0 {
            return if p.abs() == 1 { Ok(Self::INFINITY) } else { Err(GroupError::InvalidCusp { p, q }) };
        }
        if gcd(p.unsigned_abs(), q as u64) != 1 {
            return Err(GroupError::InvalidCusp { p, q });
        }
        Ok(Cusp { p, q })
    }

    pub fn is_infinity(&self) -> bool {
        self.q == 0
    }

    pub fn value(&self) -> f64 {
        if self.q == 0 {
            f64::INFINITY
        } else {
            self.p as f64 / self.q as f64
        }
    }
}

impl fmt::Display for Cusp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.q == 0 {
            write!(f, "inf")
        } else {
            write!(f, "{}/{}", self.p, self.q)
        }
    }
}

pub(crate) fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Moves `z` into the standard fundamental domain by alternating integer
/// shifts and inversions. Returns `(zstar, g)` with `g·z = zstar`.
pub fn reduce(z: UHPoint) -> Result<(UHPoint, GroupElement), GroupError> {
    if !(z.y > 0.0) || !z.x.is_finite() || !z.y.is_finite() {
        return Err(GroupError::NotInUpperHalfPlane { x: z.x, y: z.y });
    }
    let mut w = z;
    let mut g = GroupElement::IDENTITY;
    for _ in 0..REDUCTION_CAP {
        if w.x > 0.5 || w.x < -0.5 {
            let n = (w.x + 0.5).floor();
            w.x -= n;
            g = GroupElement::translation(-(n as i64)).compose(&g)?;
            if w.x > 0.5 || w.x < -0.5 {
                // only reachable through rounding at exactly +-1/2
                w.x = w.x.clamp(-0.5, 0.5);
            }
        }
        let r = w.norm_sqr();
        if r < 1.0 {
            w = UHPoint { x: -w.x / r, y: w.y / r };
            g = GroupElement::S.compose(&g)?;
        } else {
            return Ok((w, g));
        }
    }
    Err(GroupError::ReductionCap(REDUCTION_CAP))
}

/// `Im` of the reduced representative: the largest imaginary part over the
/// orbit of `z`.
pub fn invariant_height(z: UHPoint) -> Result<f64, GroupError> {
    Ok(reduce(z)?.0.y)
}

/// `g⁻¹(∞) = -d/c`.
pub fn cusp_of(g: &GroupElement) -> Cusp {
    if g.c == 0 {
        Cusp::INFINITY
    } else {
        let (p, q) = if g.c > 0 { (-g.d, g.c) } else { (g.d, -g.c) };
        Cusp { p, q }
    }
}

/// Some element sending `∞` to the cusp.
pub fn element_to_cusp(c: Cusp) -> GroupElement {
    if c.is_infinity() {
        return GroupElement::IDENTITY;
    }
    // p*x + q*y = 1 gives det [[p, -y], [q, x]] = 1
    let (x, y) = bezout(c.p, c.q);
    GroupElement::canonical(c.p, -y, c.q, x)
}

/// `(x, y)` with `a*x + b*y = gcd(a, b) = 1` for coprime inputs.
fn bezout(a: i64, b: i64) -> (i64, i64) {
    let (mut old_r, mut r) = (a as i128, b as i128);
    let (mut old_s, mut s) = (1i128, 0i128);
    let (mut old_t, mut t) = (0i128, 1i128);
    while r != 0 {
        let q = old_r.div_euclid(r);
        (old_r, r) = (r, old_r - q * r);
        (old_s, s) = (s, old_s - q * s);
        (old_t, t) = (t, old_t - q * t);
    }
    if old_r < 0 {
        (-old_s as i64, -old_t as i64)
    } else {
        (old_s as i64, old_t as i64)
    }
}

/// Shape of a horoball of the invariant family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum HoroballDescriptor {
    /// `{y > height}` based at `∞`.
    HalfPlane { height: f64 },
    /// Euclidean disk tangent to the real axis at `cusp`.
    Disk { cusp: Cusp, center: UHPoint, diameter: f64 },
}

impl HoroballDescriptor {
    pub fn contains(&self, z: UHPoint) -> bool {
        match *self {
            HoroballDescriptor::HalfPlane { height } => z.y > height,
            HoroballDescriptor::Disk { center, diameter, .. } => {
                let r = diameter / 2.0;
                let dx = z.x - center.x;
                let dy = z.y - center.y;
                dx * dx + dy * dy < r * r
            }
        }
    }
}

/// Horoball of the height-`h` family based at `c`.
pub fn horoball_at(c: Cusp, h: f64) -> Result<HoroballDescriptor, GroupError> {
    if !(h > 1.0) {
        return Err(GroupError::HoroballOverlap(h));
    }
    if c.is_infinity() {
        return Ok(HoroballDescriptor::HalfPlane { height: h });
    }
    let q = c.q as f64;
    let diameter = 1.0 / (q * q * h);
    Ok(HoroballDescriptor::Disk {
        cusp: c,
        center: UHPoint { x: c.value(), y: diameter / 2.0 },
        diameter,
    })
}

/// Farey adjacency `|p1 q2 - p2 q1| = 1`, with `∞ = 1/0`.
pub fn farey_neighbors(c1: Cusp, c2: Cusp) -> bool {
    let det = c1.p as i128 * c2.q as i128 - c2.p as i128 * c1.q as i128;
    det.abs() == 1
}

/// Floating-point projective matrix used once exact entries overflow.
///
/// Entries are kept normalised (largest magnitude 1) and the true matrix
/// is `exp(log_scale)` times the stored one, so the Möbius action is
/// unchanged while imaginary parts can be recovered through logarithms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FloatMobius {
    pub m: [f64; 4],
    pub log_scale: f64,
}

impl FloatMobius {
    pub const IDENTITY: FloatMobius = FloatMobius { m: [1.0, 0.0, 0.0, 1.0], log_scale: 0.0 };

    pub fn from_exact(g: &GroupElement) -> Self {
        Self { m: g.to_f64(), log_scale: 0.0 }.normalised()
    }

    fn normalised(mut self) -> Self {
        let big = self.m.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
        if big > 0.0 && big != 1.0 {
            for e in &mut self.m {
                *e /= big;
            }
            self.log_scale += big.ln();
        }
        self
    }

    /// `self * other`.
    pub fn compose(&self, other: &FloatMobius) -> FloatMobius {
        let [a, b, c, d] = self.m;
        let [e, f, g, h] = other.m;
        FloatMobius {
            m: [a * e + b * g, a * f + b * h, c * e + d * g, c * f + d * h],
            log_scale: self.log_scale + other.log_scale,
        }
        .normalised()
    }

    pub fn inverse(&self) -> FloatMobius {
        let [a, b, c, d] = self.m;
        FloatMobius { m: [d, -b, -c, a], log_scale: self.log_scale }
    }

    pub fn apply(&self, z: UHPoint) -> UHPoint {
        let [a, b, c, d] = self.m;
        let den_re = c * z.x + d;
        let den_im = c * z.y;
        let den = den_re * den_re + den_im * den_im;
        let num_re = a * c * z.norm_sqr() + (a * d + b * c) * z.x + b * d;
        // the determinant of the true matrix is 1
        let y = (-2.0 * self.log_scale).exp() * z.y / den;
        UHPoint { x: num_re / den, y }
    }

    /// `ln Im(g·z)` without forming `Im(g·z)`.
    pub fn log_im(&self, z: UHPoint) -> f64 {
        let [_, _, c, d] = self.m;
        let den_re = c * z.x + d;
        let den_im = c * z.y;
        z.y.ln() - 2.0 * self.log_scale - (den_re * den_re + den_im * den_im).ln()
    }

    /// `g⁻¹(∞) = -d/c` in floating point.
    pub fn cusp_value(&self) -> f64 {
        let [_, _, c, d] = self.m;
        if c == 0.0 {
            f64::INFINITY
        } else {
            -d / c
        }
    }
}

/// A point of the universal cover stored as `global = chart⁻¹ · local`,
/// with `local` near the fundamental domain.
///
/// Far from the base region plain global coordinates run out of `f64`
/// resolution; the exact chart keeps the relative position of nearby
/// lifts computable to full precision.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Lift {
    pub chart: GroupElement,
    pub local: UHPoint,
}

impl Lift {
    pub fn from_global(z: UHPoint) -> Result<Self, GroupError> {
        let (w, g) = reduce(z)?;
        Ok(Lift { chart: g, local: w })
    }

    pub fn global(&self) -> UHPoint {
        self.chart.inverse().apply(self.local)
    }

    /// This lift expressed in the chart `target` (i.e. `target · global`).
    pub fn in_chart(&self, target: &GroupElement) -> Result<UHPoint, GroupError> {
        let rel = target.compose(&self.chart.inverse())?;
        Ok(rel.apply(self.local))
    }

    /// Re-reduce the local coordinate, updating the chart.
    pub fn renormalised(&self) -> Result<Self, GroupError> {
        let (w, g) = reduce(self.local)?;
        Ok(Lift { chart: g.compose(&self.chart)?, local: w })
    }
}
