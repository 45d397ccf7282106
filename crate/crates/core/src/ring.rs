//! Coefficient rings for differential operators.

use core::fmt::Debug;

use num_rational::BigRational;
use num_traits::{One, Zero};

/// Commutative ring with exact zero test. Operator coefficients never depend
/// on `x`, so they commute with every derivative.
pub trait Ring: Clone + PartialEq + Debug {
    fn zero() -> Self;
    fn one() -> Self;
    fn is_zero(&self) -> bool;
    fn add_assign_ref(&mut self, other: &Self);
    fn mul_ref(&self, other: &Self) -> Self;
    fn neg_ref(&self) -> Self;
    fn from_rational(r: &BigRational) -> Self;

    fn scale(&self, r: &BigRational) -> Self {
        self.mul_ref(&Self::from_rational(r))
    }

    fn sub_assign_ref(&mut self, other: &Self) {
        self.add_assign_ref(&other.neg_ref());
    }
}

impl Ring for BigRational {
    fn zero() -> Self {
        Zero::zero()
    }
    fn one() -> Self {
        One::one()
    }
    fn is_zero(&self) -> bool {
        Zero::is_zero(self)
    }
    fn add_assign_ref(&mut self, other: &Self) {
        *self += other;
    }
    fn mul_ref(&self, other: &Self) -> Self {
        self * other
    }
    fn neg_ref(&self) -> Self {
        -self
    }
    fn from_rational(r: &BigRational) -> Self {
        r.clone()
    }
}

/// Numeric coefficients, used once every atom has been evaluated at a center.
impl Ring for f64 {
    fn zero() -> Self {
        0.0
    }
    fn one() -> Self {
        1.0
    }
    fn is_zero(&self) -> bool {
        *self == 0.0
    }
    fn add_assign_ref(&mut self, other: &Self) {
        *self += *other;
    }
    fn mul_ref(&self, other: &Self) -> Self {
        self * other
    }
    fn neg_ref(&self) -> Self {
        -self
    }
    fn from_rational(r: &BigRational) -> Self {
        crate::expr::rational_to_f64(r)
    }
}

pub(crate) fn int(n: i64) -> BigRational {
    BigRational::from_integer(n.into())
}

pub(crate) fn ratio(n: i64, d: i64) -> BigRational {
    BigRational::new(n.into(), d.into())
}

pub(crate) fn factorial(n: u32) -> BigRational {
    let mut acc = num_bigint::BigInt::from(1);
    for k in 2..=n {
        acc *= k;
    }
    BigRational::from_integer(acc)
}
