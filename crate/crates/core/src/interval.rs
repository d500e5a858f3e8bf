//! Closed real intervals and the measure identities used by the scaling law.
//!
//! Arithmetic is plain endpoint arithmetic in `f64` with no outward rounding.
//! Decoder cells are half-open in the quantizer definition; they are stored
//! closed here, which leaves every measure unchanged. Membership tests use
//! closed comparison.

use serde::{Deserialize, Serialize};
use std::fmt;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    lo: f64,
    hi: f64,
}

impl Interval {
    /// Panics if `lo > hi` or either endpoint is NaN.
    pub fn new(lo: f64, hi: f64) -> Self {
        assert!(lo <= hi, "interval endpoints out of order: [{lo}, {hi}]");
        Interval { lo, hi }
    }

    pub fn try_new(lo: f64, hi: f64) -> Result<Self> {
        if lo <= hi {
            Ok(Interval { lo, hi })
        } else {
            Err(Error::arg(
                "interval",
                format!("[{lo}, {hi}] is not a valid interval"),
            ))
        }
    }

    pub fn point(x: f64) -> Self {
        Interval::new(x, x)
    }

    /// `[center - width/2, center + width/2]`.
    pub fn centered(center: f64, width: f64) -> Self {
        Interval::new(center - width / 2.0, center + width / 2.0)
    }

    /// The uncertainty box `[a* - eps, a* + eps]`.
    pub fn uncertainty(a_star: f64, eps: f64) -> Self {
        Interval::new(a_star - eps, a_star + eps)
    }

    #[inline]
    pub fn lo(&self) -> f64 {
        self.lo
    }

    #[inline]
    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn midpoint(&self) -> f64 {
        (self.lo + self.hi) / 2.0
    }

    /// Lebesgue measure `hi - lo`.
    pub fn measure(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }

    pub fn contains_zero(&self) -> bool {
        self.contains(0.0)
    }

    /// Membership with a slack of `tol` on both ends.
    pub fn contains_within(&self, x: f64, tol: f64) -> bool {
        self.lo - tol <= x && x <= self.hi + tol
    }

    pub fn translate(&self, by: f64) -> Self {
        Interval::new(self.lo + by, self.hi + by)
    }

    pub fn neg(&self) -> Self {
        Interval::new(-self.hi, -self.lo)
    }

    /// `{t^m : t in self}` for an interval that excludes zero, where the power
    /// map is monotone.
    pub fn powi_nonzero(&self, m: u32) -> Self {
        debug_assert!(!self.contains_zero() || m == 0);
        let a = self.lo.powi(m as i32);
        let b = self.hi.powi(m as i32);
        Interval::new(a.min(b), a.max(b))
    }
}

impl fmt::Display for Interval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}]", self.lo, self.hi)
    }
}

pub fn measure(i: &Interval) -> f64 {
    i.measure()
}

/// Minkowski sum `{x + y}`; its measure is the sum of the measures.
pub fn minkowski_sum(i: &Interval, j: &Interval) -> Interval {
    Interval::new(i.lo + j.lo, i.hi + j.hi)
}

/// Exact hull of `{a * y : a in A, y in Y}` from the four endpoint products.
pub fn scale_product(a: &Interval, y: &Interval) -> Interval {
    let p = [a.lo * y.lo, a.lo * y.hi, a.hi * y.lo, a.hi * y.hi];
    let lo = p.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = p.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Interval::new(lo, hi)
}

/// `mu([a* - eps, a* + eps] * Y)` by sign-case analysis instead of the hull.
///
/// Three of the four cases are the textbook ones: `Y` straddling zero with a
/// sign-definite box scales by `|a*| + eps`; a sign-definite `Y` picks up the
/// `eps * beta(Y)` term; a zero-straddling box on a sign-definite `Y` gives
/// `2 eps max(|lo|, |hi|)`. When both straddle zero the extreme products come
/// from opposite corners and neither of those formulas applies.
pub fn product_measure_cases(a_star: f64, eps: f64, y: &Interval) -> f64 {
    let a = Interval::uncertainty(a_star, eps);
    match (y.contains_zero(), a.contains_zero()) {
        (true, false) => (a_star.abs() + eps) * y.measure(),
        (false, false) => a_star.abs() * y.measure() + eps * beta(y),
        (false, true) => 2.0 * eps * y.lo.abs().max(y.hi.abs()),
        (true, true) => {
            let (ylo, yhi) = (y.lo.abs(), y.hi.abs());
            let (alo, ahi) = (a.lo.abs(), a.hi.abs());
            (ahi * yhi).max(alo * ylo) + (alo * yhi).max(ahi * ylo)
        }
    }
}

/// The three-branch functional `beta`: `hi + lo` for nonnegative intervals,
/// `hi - lo` across zero, `-hi - lo` for nonpositive ones.
pub fn beta(y: &Interval) -> f64 {
    if 0.0 <= y.lo {
        y.hi + y.lo
    } else if y.hi <= 0.0 {
        -y.hi - y.lo
    } else {
        y.hi - y.lo
    }
}
