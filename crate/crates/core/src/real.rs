//! Scalar abstraction shared by `f64` and multiprecision evaluation.
//!
//! Game certificates live at scales far below `f64` resolution, so every
//! function DAG evaluates over any [`Real`].

use rug::ops::Pow;
use rug::Float;
use std::cmp::Ordering;
use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Sub};

pub trait Real:
    Clone
    + fmt::Debug
    + PartialOrd
    + Send
    + Sync
    + 'static
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    /// Constant carrying the precision of `self`.
    fn cst(&self, v: f64) -> Self;
    fn to_f64(&self) -> f64;
    fn abs(&self) -> Self;
    fn sqrt(&self) -> Self;
    fn exp(&self) -> Self;
    fn powf(&self, p: f64) -> Self;
    /// Mantissa bits (53 for `f64`).
    fn bits(&self) -> u32;
    fn to_float(&self) -> Float;
    fn from_float(&self, v: &Float) -> Self;

    fn zero(&self) -> Self {
        self.cst(0.0)
    }
    fn scale(&self, c: f64) -> Self {
        self.clone() * self.cst(c)
    }
    fn shift(&self, c: f64) -> Self {
        self.clone() + self.cst(c)
    }
    fn max_r(self, o: Self) -> Self {
        if o > self {
            o
        } else {
            self
        }
    }
    fn min_r(self, o: Self) -> Self {
        if o < self {
            o
        } else {
            self
        }
    }
    fn lt_f(&self, c: f64) -> bool {
        self.partial_cmp(&self.cst(c)) == Some(Ordering::Less)
    }
    fn le_f(&self, c: f64) -> bool {
        matches!(
            self.partial_cmp(&self.cst(c)),
            Some(Ordering::Less | Ordering::Equal)
        )
    }
}

impl Real for f64 {
    #[inline]
    fn cst(&self, v: f64) -> f64 {
        v
    }
    #[inline]
    fn to_f64(&self) -> f64 {
        *self
    }
    #[inline]
    fn abs(&self) -> f64 {
        f64::abs(*self)
    }
    #[inline]
    fn sqrt(&self) -> f64 {
        f64::sqrt(*self)
    }
    #[inline]
    fn exp(&self) -> f64 {
        f64::exp(*self)
    }
    #[inline]
    fn powf(&self, p: f64) -> f64 {
        f64::powf(*self, p)
    }
    fn bits(&self) -> u32 {
        53
    }
    fn to_float(&self) -> Float {
        Float::with_val(53, *self)
    }
    fn from_float(&self, v: &Float) -> f64 {
        v.to_f64()
    }
    #[inline]
    fn scale(&self, c: f64) -> f64 {
        self * c
    }
    #[inline]
    fn shift(&self, c: f64) -> f64 {
        self + c
    }
    #[inline]
    fn lt_f(&self, c: f64) -> bool {
        *self < c
    }
    #[inline]
    fn le_f(&self, c: f64) -> bool {
        *self <= c
    }
}

/// MPFR float; binary operations take the larger operand precision.
#[derive(Clone, PartialEq, PartialOrd)]
pub struct Mp(pub Float);

impl Mp {
    pub fn new(prec: u32, v: f64) -> Mp {
        Mp(Float::with_val(prec, v))
    }
    pub fn prec(&self) -> u32 {
        self.0.prec()
    }
    pub fn vec(prec: u32, v: &[f64]) -> Vec<Mp> {
        v.iter().map(|&x| Mp::new(prec, x)).collect()
    }
}

impl fmt::Debug for Mp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Mp({})", self.0.to_string_radix(10, Some(24)))
    }
}

macro_rules! mp_binop {
    ($tr:ident, $m:ident, $op:tt) => {
        impl $tr for Mp {
            type Output = Mp;
            fn $m(self, rhs: Mp) -> Mp {
                let p = self.0.prec().max(rhs.0.prec());
                Mp(Float::with_val(p, &self.0 $op &rhs.0))
            }
        }
    };
}
mp_binop!(Add, add, +);
mp_binop!(Sub, sub, -);
mp_binop!(Mul, mul, *);
mp_binop!(Div, div, /);

impl Neg for Mp {
    type Output = Mp;
    fn neg(self) -> Mp {
        Mp(-self.0)
    }
}

impl Real for Mp {
    fn cst(&self, v: f64) -> Mp {
        Mp(Float::with_val(self.0.prec(), v))
    }
    fn to_f64(&self) -> f64 {
        self.0.to_f64()
    }
    fn abs(&self) -> Mp {
        Mp(self.0.clone().abs())
    }
    fn sqrt(&self) -> Mp {
        Mp(self.0.clone().sqrt())
    }
    fn exp(&self) -> Mp {
        Mp(self.0.clone().exp())
    }
    fn bits(&self) -> u32 {
        self.0.prec()
    }
    fn to_float(&self) -> Float {
        self.0.clone()
    }
    fn from_float(&self, v: &Float) -> Mp {
        Mp(Float::with_val(self.0.prec(), v))
    }
    fn powf(&self, p: f64) -> Mp {
        let e = Float::with_val(self.0.prec(), p);
        Mp(Float::with_val(self.0.prec(), self.0.clone().pow(&e)))
    }
}

/// Bits needed to resolve relative increments of size `scale` with `extra` spare bits.
pub fn bits_for_scale(scale: f64, extra: u32) -> u32 {
    let s = if scale > 0.0 && scale.is_finite() {
        scale
    } else {
        1.0
    };
    let need = (-s.log2()).max(0.0).ceil() as u32;
    64 + need + extra
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mp_resolves_tiny_offsets() {
        let x = Mp::new(256, 0.5);
        let u = Mp::new(256, 1e-60);
        let d = (x.clone() + u) - x;
        assert!((d.to_f64() - 1e-60).abs() < 1e-75);
    }

    #[test]
    fn mp_transcendentals_match_f64() {
        let a = Mp::new(128, 2.0);
        assert!((a.sqrt().to_f64() - 2f64.sqrt()).abs() < 1e-15);
        assert!((a.exp().to_f64() - 2f64.exp()).abs() < 1e-14);
        assert!((a.powf(1.5).to_f64() - 2f64.powf(1.5)).abs() < 1e-14);
    }
}
