//! Scalar abstraction shared by the exact and floating-point code paths.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{FromPrimitive, Num, Signed, ToPrimitive, Zero};
use std::fmt::Debug;

/// Field element usable by the Bell, Hankel and quadrature-free routines.
///
/// Implemented for `f32`, `f64` and [`BigRational`].
pub trait Scalar: Num + Signed + Clone + PartialOrd + Debug + ToPrimitive {
    fn from_int(v: i128) -> Self;

    fn from_ratio(num: i128, den: i128) -> Self {
        Self::from_int(num) / Self::from_int(den)
    }

    fn from_rational(r: &BigRational) -> Self;

    fn to_f64_lossy(&self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    fn powi(&self, e: u32) -> Self {
        let mut acc = Self::one();
        for _ in 0..e {
            acc = acc * self.clone();
        }
        acc
    }
}

impl Scalar for f64 {
    fn from_int(v: i128) -> Self {
        v as f64
    }
    fn from_rational(r: &BigRational) -> Self {
        r.to_f64().unwrap_or(f64::NAN)
    }
    fn powi(&self, e: u32) -> Self {
        f64::powi(*self, e as i32)
    }
}

impl Scalar for f32 {
    fn from_int(v: i128) -> Self {
        v as f32
    }
    fn from_rational(r: &BigRational) -> Self {
        r.to_f32().unwrap_or(f32::NAN)
    }
    fn powi(&self, e: u32) -> Self {
        f32::powi(*self, e as i32)
    }
}

impl Scalar for BigRational {
    fn from_int(v: i128) -> Self {
        BigRational::from_integer(BigInt::from(v))
    }
    fn from_rational(r: &BigRational) -> Self {
        r.clone()
    }
}

/// Exact rational from an `f64` (every finite double is a dyadic rational).
pub fn rational_from_f64(x: f64) -> BigRational {
    BigRational::from_f64(x).unwrap_or_else(BigRational::zero)
}

pub(crate) fn binomial(n: u64, k: u64) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
    }
    acc
}

pub(crate) fn factorial(n: u64) -> u128 {
    (1..=n as u128).product::<u128>().max(1)
}
