//! Closed angle intervals on the real line.
//!
//! Phases are never wrapped implicitly: an interval such as `[5.0, 7.0]` is a
//! different object from `[5.0 - 2π, 7.0 - 2π]`, and moving between the two is
//! an explicit [`PhaseInterval::shift`]. Stability conditions compare sums of
//! intervals against `(-π, π) + 2πℓ` on the real line, so the distinction matters.

use std::f64::consts::{PI, TAU};
use std::fmt;
use std::ops::{Add, Sub};

use serde::{Deserialize, Serialize};

/// A closed interval `[lo, hi]` of angles in radians, or the empty phase.
///
/// The empty value stands for the phase of a zero matrix or of a frequency
/// response evaluated at a `jω`-axis pole or zero. It absorbs under Minkowski
/// arithmetic: any sum that involves an undefined phase is undefined.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum PhaseInterval {
    Empty,
    Closed { lo: f64, hi: f64 },
}

impl PhaseInterval {
    /// Builds `[lo, hi]`; endpoints are swapped if given in reverse order.
    pub fn new(lo: f64, hi: f64) -> Self {
        if lo <= hi {
            PhaseInterval::Closed { lo, hi }
        } else {
            PhaseInterval::Closed { lo: hi, hi: lo }
        }
    }

    pub fn singleton(a: f64) -> Self {
        PhaseInterval::Closed { lo: a, hi: a }
    }

    /// `[center - radius, center + radius]`.
    pub fn centered(center: f64, radius: f64) -> Self {
        Self::new(center - radius, center + radius)
    }

    pub fn empty() -> Self {
        PhaseInterval::Empty
    }

    pub fn is_empty(&self) -> bool {
        matches!(self, PhaseInterval::Empty)
    }

    pub fn lo(&self) -> Option<f64> {
        match *self {
            PhaseInterval::Closed { lo, .. } => Some(lo),
            PhaseInterval::Empty => None,
        }
    }

    pub fn hi(&self) -> Option<f64> {
        match *self {
            PhaseInterval::Closed { hi, .. } => Some(hi),
            PhaseInterval::Empty => None,
        }
    }

    /// Both endpoints, if the interval is not empty.
    pub fn bounds(&self) -> Option<(f64, f64)> {
        match *self {
            PhaseInterval::Closed { lo, hi } => Some((lo, hi)),
            PhaseInterval::Empty => None,
        }
    }

    /// `hi - lo`, or `None` for the empty phase.
    pub fn width(&self) -> Option<f64> {
        self.bounds().map(|(lo, hi)| hi - lo)
    }

    pub fn midpoint(&self) -> Option<f64> {
        self.bounds().map(|(lo, hi)| 0.5 * (lo + hi))
    }

    /// Translates the interval by `2π·branch`.
    pub fn shift(&self, branch: i64) -> Self {
        self.offset(TAU * branch as f64)
    }

    /// Translates the interval by an arbitrary real amount.
    pub fn offset(&self, delta: f64) -> Self {
        match *self {
            PhaseInterval::Closed { lo, hi } => PhaseInterval::Closed {
                lo: lo + delta,
                hi: hi + delta,
            },
            PhaseInterval::Empty => PhaseInterval::Empty,
        }
    }

    /// Minkowski sum `[a, b] + [c, d] = [a + c, b + d]`.
    pub fn minkowski_add(&self, other: &Self) -> Self {
        match (*self, *other) {
            (PhaseInterval::Closed { lo: a, hi: b }, PhaseInterval::Closed { lo: c, hi: d }) => {
                PhaseInterval::Closed { lo: a + c, hi: b + d }
            }
            _ => PhaseInterval::Empty,
        }
    }

    /// Minkowski difference `[a, b] - [c, d] = [a - d, b - c]`.
    pub fn minkowski_sub(&self, other: &Self) -> Self {
        match (*self, *other) {
            (PhaseInterval::Closed { lo: a, hi: b }, PhaseInterval::Closed { lo: c, hi: d }) => {
                PhaseInterval::Closed { lo: a - d, hi: b - c }
            }
            _ => PhaseInterval::Empty,
        }
    }

    /// True if `self ⊆ other` up to `tol` on each endpoint.
    pub fn is_subset_of(&self, other: &Self, tol: f64) -> bool {
        match (self.bounds(), other.bounds()) {
            (Some((a, b)), Some((c, d))) => a >= c - tol && b <= d + tol,
            (None, _) => true,
            (Some(_), None) => false,
        }
    }

    pub fn contains(&self, x: f64, tol: f64) -> bool {
        self.bounds()
            .is_some_and(|(lo, hi)| x >= lo - tol && x <= hi + tol)
    }

    /// Decides whether the interval fits strictly inside `(-π, π) + 2πℓ`.
    ///
    /// With `allow_shift` false only `ℓ = 0` is tried. Returns the witness
    /// branch on success. Since the open cones have width `2π`, at most one
    /// `ℓ` can work, namely the one whose cone contains the midpoint.
    pub fn in_open_pi_cone(&self, allow_shift: bool) -> Option<i64> {
        let (lo, hi) = self.bounds()?;
        let branch = if allow_shift {
            (0.5 * (lo + hi) / TAU).round() as i64
        } else {
            0
        };
        let c = TAU * branch as f64;
        (lo > c - PI && hi < c + PI).then_some(branch)
    }

    /// `π - max(|lo - 2πℓ|, |hi - 2πℓ|)`: the clearance to the boundary of the
    /// cone `(-π, π) + 2πℓ`. Positive exactly when the interval fits inside.
    pub fn cone_margin(&self, branch: i64) -> Option<f64> {
        let c = TAU * branch as f64;
        self.bounds()
            .map(|(lo, hi)| PI - (lo - c).abs().max((hi - c).abs()))
    }
}

impl Add for PhaseInterval {
    type Output = PhaseInterval;
    fn add(self, rhs: Self) -> Self {
        self.minkowski_add(&rhs)
    }
}

impl Sub for PhaseInterval {
    type Output = PhaseInterval;
    fn sub(self, rhs: Self) -> Self {
        self.minkowski_sub(&rhs)
    }
}

impl std::iter::Sum for PhaseInterval {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(PhaseInterval::singleton(0.0), |acc, x| acc + x)
    }
}

impl fmt::Display for PhaseInterval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PhaseInterval::Empty => write!(f, "∅"),
            PhaseInterval::Closed { lo, hi } => write!(f, "[{lo:.6}, {hi:.6}]"),
        }
    }
}

/// Wraps an angle into `[-π, π)`.
pub fn wrap_angle(a: f64) -> f64 {
    let w = (a + PI).rem_euclid(TAU) - PI;
    // rem_euclid can return TAU itself for tiny negative inputs
    if w >= PI {
        w - TAU
    } else {
        w
    }
}

/// The representative of `a + 2πk` closest to `reference`.
pub fn unwrap_near(a: f64, reference: f64) -> f64 {
    a + TAU * ((reference - a) / TAU).round()
}
