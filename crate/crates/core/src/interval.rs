//! Closed real intervals with outward rounding.
//!
//! Every arithmetic result is widened by one ulp on each side, and
//! transcendental functions (which go through the platform libm) by two,
//! so the returned interval always contains the exact real result.

use std::f64::consts::{FRAC_PI_2, PI};
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

#[inline]
pub(crate) fn down(x: f64) -> f64 {
    x.next_down()
}

#[inline]
pub(crate) fn up(x: f64) -> f64 {
    x.next_up()
}

#[inline]
fn down2(x: f64) -> f64 {
    x.next_down().next_down()
}

#[inline]
fn up2(x: f64) -> f64 {
    x.next_up().next_up()
}

/// A closed interval `[lo, hi]`.
#[derive(Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl fmt::Debug for Interval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{:.17e}, {:.17e}]", self.lo, self.hi)
    }
}

impl fmt::Display for Interval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}]", self.lo, self.hi)
    }
}

impl Interval {
    pub const ENTIRE: Interval = Interval {
        lo: f64::NEG_INFINITY,
        hi: f64::INFINITY,
    };

    /// Builds `[lo, hi]`. Panics in debug builds when `lo > hi`.
    #[inline]
    pub fn new(lo: f64, hi: f64) -> Self {
        debug_assert!(lo <= hi, "inverted interval [{lo}, {hi}]");
        Interval { lo, hi }
    }

    #[inline]
    pub fn point(x: f64) -> Self {
        Interval { lo: x, hi: x }
    }

    /// Interval from two values in either order.
    #[inline]
    pub fn spanning(a: f64, b: f64) -> Self {
        Interval {
            lo: a.min(b),
            hi: a.max(b),
        }
    }

    /// Symmetric interval `[c - r, c + r]`, rounded outward.
    pub fn centered(c: f64, r: f64) -> Self {
        Interval {
            lo: down(c - r),
            hi: up(c + r),
        }
    }

    #[inline]
    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    #[inline]
    pub fn mid(&self) -> f64 {
        if self.lo == self.hi {
            self.lo
        } else {
            0.5 * self.lo + 0.5 * self.hi
        }
    }

    /// Upper bound on the distance from `mid()` to either endpoint.
    #[inline]
    pub fn rad(&self) -> f64 {
        let m = self.mid();
        up((m - self.lo).max(self.hi - m))
    }

    /// Largest absolute value in the interval.
    #[inline]
    pub fn mag(&self) -> f64 {
        self.lo.abs().max(self.hi.abs())
    }

    /// Smallest absolute value in the interval.
    #[inline]
    pub fn mig(&self) -> f64 {
        if self.contains(0.0) {
            0.0
        } else {
            self.lo.abs().min(self.hi.abs())
        }
    }

    #[inline]
    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }

    #[inline]
    pub fn contains_interval(&self, other: &Interval) -> bool {
        self.lo <= other.lo && other.hi <= self.hi
    }

    #[inline]
    pub fn is_finite(&self) -> bool {
        self.lo.is_finite() && self.hi.is_finite()
    }

    #[inline]
    pub fn hull(&self, other: &Interval) -> Interval {
        Interval {
            lo: self.lo.min(other.lo),
            hi: self.hi.max(other.hi),
        }
    }

    pub fn intersect(&self, other: &Interval) -> Option<Interval> {
        let lo = self.lo.max(other.lo);
        let hi = self.hi.min(other.hi);
        (lo <= hi).then_some(Interval { lo, hi })
    }

    /// Grows the interval by `r` on both sides.
    pub fn inflate(&self, r: f64) -> Interval {
        Interval {
            lo: down(self.lo - r),
            hi: up(self.hi + r),
        }
    }

    pub fn scale(&self, k: f64) -> Interval {
        let a = self.lo * k;
        let b = self.hi * k;
        Interval {
            lo: down(a.min(b)),
            hi: up(a.max(b)),
        }
    }

    pub fn add_scalar(&self, k: f64) -> Interval {
        Interval {
            lo: down(self.lo + k),
            hi: up(self.hi + k),
        }
    }

    pub fn sqr(&self) -> Interval {
        let a = self.lo * self.lo;
        let b = self.hi * self.hi;
        if self.contains(0.0) {
            Interval::new(0.0, up(a.max(b)))
        } else {
            Interval::new(down(a.min(b)).max(0.0), up(a.max(b)))
        }
    }

    pub fn sqrt(&self) -> Interval {
        let lo = self.lo.max(0.0);
        let hi = self.hi.max(0.0);
        Interval::new(down(lo.sqrt()).max(0.0), up(hi.sqrt()))
    }

    /// `1 / self`; `None` when the interval contains zero.
    pub fn recip(&self) -> Option<Interval> {
        if self.contains(0.0) {
            return None;
        }
        Some(Interval::new(down(1.0 / self.hi), up(1.0 / self.lo)))
    }

    pub fn div(&self, other: &Interval) -> Option<Interval> {
        if other.contains(0.0) {
            return None;
        }
        let c = [
            self.lo / other.lo,
            self.lo / other.hi,
            self.hi / other.lo,
            self.hi / other.hi,
        ];
        Some(min_max_outward(&c))
    }

    pub fn max_scalar(&self, k: f64) -> Interval {
        Interval::new(self.lo.max(k), self.hi.max(k))
    }

    pub fn min_scalar(&self, k: f64) -> Interval {
        Interval::new(self.lo.min(k), self.hi.min(k))
    }

    pub fn max(&self, other: &Interval) -> Interval {
        Interval::new(self.lo.max(other.lo), self.hi.max(other.hi))
    }

    pub fn min(&self, other: &Interval) -> Interval {
        Interval::new(self.lo.min(other.lo), self.hi.min(other.hi))
    }

    /// Interval cosine.
    pub fn cos(&self) -> Interval {
        if !self.is_finite() || self.width() >= 2.0 * PI {
            return Interval::new(-1.0, 1.0);
        }
        // Extremum search on a slightly enlarged interval: a false positive
        // only loosens the result.
        let slack = 1e-12 * (1.0 + self.mag());
        let lo = self.lo - slack;
        let hi = self.hi + slack;
        let has_max = contains_multiple(lo, hi, 2.0 * PI, 0.0);
        let has_min = contains_multiple(lo, hi, 2.0 * PI, PI);
        let a = self.lo.cos();
        let b = self.hi.cos();
        let out_lo = if has_min { -1.0 } else { down2(a.min(b)) };
        let out_hi = if has_max { 1.0 } else { up2(a.max(b)) };
        Interval::new(out_lo.max(-1.0), out_hi.min(1.0))
    }

    /// Interval sine.
    pub fn sin(&self) -> Interval {
        if !self.is_finite() || self.width() >= 2.0 * PI {
            return Interval::new(-1.0, 1.0);
        }
        let slack = 1e-12 * (1.0 + self.mag());
        let lo = self.lo - slack;
        let hi = self.hi + slack;
        let has_max = contains_multiple(lo, hi, 2.0 * PI, FRAC_PI_2);
        let has_min = contains_multiple(lo, hi, 2.0 * PI, -FRAC_PI_2);
        let a = self.lo.sin();
        let b = self.hi.sin();
        let out_lo = if has_min { -1.0 } else { down2(a.min(b)) };
        let out_hi = if has_max { 1.0 } else { up2(a.max(b)) };
        Interval::new(out_lo.max(-1.0), out_hi.min(1.0))
    }

    pub fn tanh(&self) -> Interval {
        Interval::new(down2(self.lo.tanh()).max(-1.0), up2(self.hi.tanh()).min(1.0))
    }

    /// Range of `1 - tanh(x)^2` over the interval.
    pub fn tanh_derivative(&self) -> Interval {
        let t = self.tanh();
        let sq = t.sqr();
        Interval::new(down(1.0 - sq.hi).max(0.0), up(1.0 - sq.lo).min(1.0))
    }

    /// Interval tangent; `None` unless the interval lies inside `(-pi/2, pi/2)`.
    pub fn tan(&self) -> Option<Interval> {
        if self.lo <= -FRAC_PI_2 + 1e-9 || self.hi >= FRAC_PI_2 - 1e-9 {
            return None;
        }
        Some(Interval::new(down2(self.lo.tan()), up2(self.hi.tan())))
    }

    /// Range of `atan2(y, x)` over the box `y × x`.
    ///
    /// The box must not contain the origin. When the box straddles the branch
    /// cut on the negative x axis the result is unwrapped, so `hi` may exceed
    /// `pi`.
    pub fn atan2_box(y: &Interval, x: &Interval) -> Interval {
        if y.contains(0.0) && x.contains(0.0) {
            return Interval::new(-PI, PI);
        }
        let corners = [y.lo.atan2(x.lo), y.lo.atan2(x.hi), y.hi.atan2(x.lo), y.hi.atan2(x.hi)];
        let straddles_cut = x.hi < 0.0 && y.lo < 0.0 && y.hi >= 0.0;
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for mut a in corners {
            if straddles_cut && a < 0.0 {
                a += 2.0 * PI;
            }
            lo = lo.min(a);
            hi = hi.max(a);
        }
        if x.hi < 0.0 && y.lo == 0.0 && !straddles_cut {
            // atan2(+0, negative) = pi; keep the range on the positive side.
            hi = hi.max(PI);
        }
        Interval::new(down2(lo), up2(hi))
    }
}

fn min_max_outward(values: &[f64]) -> Interval {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &v in values {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    Interval::new(down(lo), up(hi))
}

/// Does `[lo, hi]` contain `offset + k * period` for some integer `k`?
fn contains_multiple(lo: f64, hi: f64, period: f64, offset: f64) -> bool {
    let k = ((lo - offset) / period).ceil();
    offset + k * period <= hi
}

impl Add for Interval {
    type Output = Interval;
    #[inline]
    fn add(self, rhs: Interval) -> Interval {
        Interval {
            lo: down(self.lo + rhs.lo),
            hi: up(self.hi + rhs.hi),
        }
    }
}

impl Sub for Interval {
    type Output = Interval;
    #[inline]
    fn sub(self, rhs: Interval) -> Interval {
        Interval {
            lo: down(self.lo - rhs.hi),
            hi: up(self.hi - rhs.lo),
        }
    }
}

impl Mul for Interval {
    type Output = Interval;
    fn mul(self, rhs: Interval) -> Interval {
        let c = [self.lo * rhs.lo, self.lo * rhs.hi, self.hi * rhs.lo, self.hi * rhs.hi];
        // 0 * inf products are only possible on unbounded inputs.
        if c.iter().any(|v| v.is_nan()) {
            return Interval::ENTIRE;
        }
        min_max_outward(&c)
    }
}

impl Neg for Interval {
    type Output = Interval;
    #[inline]
    fn neg(self) -> Interval {
        Interval {
            lo: -self.hi,
            hi: -self.lo,
        }
    }
}
