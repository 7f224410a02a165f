//! Phasor arithmetic and the symmetrical-component (Fortescue) transform.
//!
//! All electrical quantities in the simulator are fundamental-frequency
//! phasors in per-unit. Angles cross API boundaries in degrees and are kept
//! in radians internally.
//!
//! The transform uses the 1/3-scaled (power-variant) convention with the
//! rotation operator `a = 1∠120°`:
//!
//! ```text
//! V0 = (Va + Vb + Vc) / 3
//! V1 = (Va + a·Vb + a²·Vc) / 3
//! V2 = (Va + a²·Vb + a·Vc) / 3
//! ```
//!
//! so that a phase quantity is the plain sum of its sequence components
//! (`Va = V0 + V1 + V2`).

use std::f64::consts::PI;
use std::ops::{Add, Mul, Sub};

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Complex per-unit phasor.
pub type Phasor = Complex64;

/// Polar views on [`Phasor`].
pub trait PhasorExt {
    fn from_polar_deg(magnitude: f64, angle_deg: f64) -> Self;
    fn magnitude(&self) -> f64;
    /// Angle in degrees, normalized to (−180°, +180°].
    fn angle_deg(&self) -> f64;
    fn is_finite_phasor(&self) -> bool;
}

impl PhasorExt for Phasor {
    fn from_polar_deg(magnitude: f64, angle_deg: f64) -> Self {
        Complex64::from_polar(magnitude, angle_deg.to_radians())
    }

    fn magnitude(&self) -> f64 {
        self.norm()
    }

    fn angle_deg(&self) -> f64 {
        normalize_deg(self.im.atan2(self.re).to_degrees())
    }

    fn is_finite_phasor(&self) -> bool {
        self.re.is_finite() && self.im.is_finite()
    }
}

fn normalize_deg(mut deg: f64) -> f64 {
    if deg <= -180.0 {
        deg += 360.0;
    }
    if deg > 180.0 {
        deg -= 360.0;
    }
    deg
}

/// Rotation operator `a = 1∠120°`.
pub fn rotation_a() -> Phasor {
    Complex64::new(-0.5, 3f64.sqrt() / 2.0)
}

/// Rectangular (d, q) to polar (magnitude, degrees). `(0, 0)` maps to `(0, 0°)`.
pub fn rect_to_polar(d: f64, q: f64) -> (f64, f64) {
    let magnitude = d.hypot(q);
    if magnitude == 0.0 {
        return (0.0, 0.0);
    }
    (magnitude, normalize_deg(q.atan2(d) * 180.0 / PI))
}

/// Phase-domain set (phases a, b, c).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ThreePhaseSet {
    pub a: Phasor,
    pub b: Phasor,
    pub c: Phasor,
}

/// Sequence-domain set: positive (1), negative (2) and zero (0) components.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SequenceSet {
    pub pos: Phasor,
    pub neg: Phasor,
    pub zero: Phasor,
}

impl ThreePhaseSet {
    pub fn new(a: Phasor, b: Phasor, c: Phasor) -> Self {
        Self { a, b, c }
    }

    /// Balanced positive-sequence set with phase a equal to `a`.
    pub fn balanced(a: Phasor) -> Self {
        let rot = rotation_a();
        Self {
            a,
            b: a * rot * rot,
            c: a * rot,
        }
    }

    pub fn as_array(&self) -> [Phasor; 3] {
        [self.a, self.b, self.c]
    }

    pub fn is_finite(&self) -> bool {
        self.as_array().iter().all(PhasorExt::is_finite_phasor)
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        [
            (self.a - other.a).norm(),
            (self.b - other.b).norm(),
            (self.c - other.c).norm(),
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }
}

impl SequenceSet {
    pub fn new(pos: Phasor, neg: Phasor, zero: Phasor) -> Self {
        Self { pos, neg, zero }
    }

    pub fn positive(pos: Phasor) -> Self {
        Self {
            pos,
            ..Self::default()
        }
    }

    /// Component by sequence index (0, 1 or 2).
    pub fn get(&self, seq: Sequence) -> Phasor {
        match seq {
            Sequence::Positive => self.pos,
            Sequence::Negative => self.neg,
            Sequence::Zero => self.zero,
        }
    }

    pub fn set(&mut self, seq: Sequence, value: Phasor) {
        match seq {
            Sequence::Positive => self.pos = value,
            Sequence::Negative => self.neg = value,
            Sequence::Zero => self.zero = value,
        }
    }

    pub fn is_finite(&self) -> bool {
        [self.pos, self.neg, self.zero]
            .iter()
            .all(PhasorExt::is_finite_phasor)
    }

    /// Phase-a value, i.e. the plain sum of the three components.
    pub fn phase_a(&self) -> Phasor {
        self.pos + self.neg + self.zero
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        Sequence::ALL
            .iter()
            .map(|&s| (self.get(s) - other.get(s)).norm())
            .fold(0.0, f64::max)
    }
}

impl Add for SequenceSet {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        Self::new(self.pos + rhs.pos, self.neg + rhs.neg, self.zero + rhs.zero)
    }
}

impl Sub for SequenceSet {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        Self::new(self.pos - rhs.pos, self.neg - rhs.neg, self.zero - rhs.zero)
    }
}

impl Mul<Phasor> for SequenceSet {
    type Output = Self;
    fn mul(self, k: Phasor) -> Self {
        Self::new(self.pos * k, self.neg * k, self.zero * k)
    }
}

impl Add for ThreePhaseSet {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        Self::new(self.a + rhs.a, self.b + rhs.b, self.c + rhs.c)
    }
}

impl Mul<Phasor> for ThreePhaseSet {
    type Output = Self;
    fn mul(self, k: Phasor) -> Self {
        Self::new(self.a * k, self.b * k, self.c * k)
    }
}

/// Sequence network selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Sequence {
    Positive,
    Negative,
    Zero,
}

impl Sequence {
    pub const ALL: [Sequence; 3] = [Sequence::Positive, Sequence::Negative, Sequence::Zero];
}

/// Phase to sequence components.
pub fn abc_to_012(p: &ThreePhaseSet) -> Result<SequenceSet> {
    if !p.is_finite() {
        return Err(Error::NonFinite("abc_to_012 input".into()));
    }
    let a = rotation_a();
    let a2 = a * a;
    let third = 1.0 / 3.0;
    Ok(SequenceSet {
        zero: (p.a + p.b + p.c) * third,
        pos: (p.a + a * p.b + a2 * p.c) * third,
        neg: (p.a + a2 * p.b + a * p.c) * third,
    })
}

/// Sequence components to phase quantities; exact inverse of [`abc_to_012`].
pub fn seq_012_to_abc(s: &SequenceSet) -> Result<ThreePhaseSet> {
    if !s.is_finite() {
        return Err(Error::NonFinite("seq_012_to_abc input".into()));
    }
    Ok(sequence_to_phase_unchecked(s))
}

pub(crate) fn sequence_to_phase_unchecked(s: &SequenceSet) -> ThreePhaseSet {
    let a = rotation_a();
    let a2 = a * a;
    ThreePhaseSet {
        a: s.zero + s.pos + s.neg,
        b: s.zero + a2 * s.pos + a * s.neg,
        c: s.zero + a * s.pos + a2 * s.neg,
    }
}
