//! Number backends shared by densities and operators.
//!
//! `f64` is used for iteration and simulation; [`BigRational`] gives exact
//! answers for the closed-form identities at small truncations.

use std::fmt::Debug;
use std::ops::{Add, Div, Mul, Sub};

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};

/// Row-sum and normalization tolerance in the floating-point backend.
pub const TOL_NORM: f64 = 1e-12;
/// Tolerance for quantities that depend on truncated infinite sums.
pub const TOL_TAIL: f64 = 1e-10;

pub trait Scalar:
    Clone
    + Debug
    + PartialOrd
    + Zero
    + One
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Send
    + Sync
    + 'static
{
    /// True when arithmetic is exact and comparisons need no tolerance.
    const EXACT: bool;

    fn from_u64(v: u64) -> Self;

    /// `base^(-exp)`.
    fn inv_pow(base: u64, exp: u32) -> Self;

    fn to_f64(&self) -> f64;

    fn abs(&self) -> Self;

    /// Equality up to `tol` (ignored by exact backends).
    fn near(&self, other: &Self, tol: f64) -> bool {
        if Self::EXACT {
            self == other
        } else {
            (self.clone() - other.clone()).abs().to_f64() <= tol
        }
    }
}

impl Scalar for f64 {
    const EXACT: bool = false;

    fn from_u64(v: u64) -> Self {
        v as f64
    }

    fn inv_pow(base: u64, exp: u32) -> Self {
        // powi goes through repeated multiplication; exact for powers of two
        // until underflow.
        (base as f64).powi(-(exp.min(i32::MAX as u32) as i32))
    }

    fn to_f64(&self) -> f64 {
        *self
    }

    fn abs(&self) -> Self {
        f64::abs(*self)
    }
}

impl Scalar for BigRational {
    const EXACT: bool = true;

    fn from_u64(v: u64) -> Self {
        BigRational::from_integer(BigInt::from(v))
    }

    fn inv_pow(base: u64, exp: u32) -> Self {
        BigRational::new(BigInt::one(), num_traits::pow(BigInt::from(base), exp as usize))
    }

    fn to_f64(&self) -> f64 {
        ToPrimitive::to_f64(self).unwrap_or(f64::NAN)
    }

    fn abs(&self) -> Self {
        Signed::abs(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inverse_powers_agree_across_backends() {
        for base in [2u64, 3, 5] {
            for exp in 0..20 {
                let exact = <BigRational as Scalar>::inv_pow(base, exp);
                let float = <f64 as Scalar>::inv_pow(base, exp);
                assert!((Scalar::to_f64(&exact) - float).abs() <= 1e-15 * float);
            }
        }
        assert_eq!(<f64 as Scalar>::inv_pow(2, 0), 1.0);
    }

    #[test]
    fn exact_near_ignores_tolerance() {
        let a = BigRational::new(1.into(), 3.into());
        let b = BigRational::new(333_333.into(), 1_000_000.into());
        assert!(!a.near(&b, 1.0));
        assert!(a.near(&a.clone(), 0.0));
        assert!(0.1f64.near(&0.1000001, 1e-6));
    }
}
