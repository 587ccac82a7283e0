//! Numeric abstraction shared by float and exact-rational evaluation.
//!
//! Fixture computations run over [`Exact`] so that values such as 0.267 or
//! 0.5625 are reproduced without rounding; everything else runs over `f64`.

use num_bigint::BigInt;
use num_rational::{BigRational, Ratio};
use num_traits::{Num, Signed, ToPrimitive, Zero};
use std::fmt::Debug;

pub type Exact = BigRational;

pub trait Scalar: Clone + Debug + PartialOrd + Num + Signed + Send + Sync {
    /// Converts a float input. Exact mode recovers the simplest fraction that
    /// round-trips to the same float, so decimal inputs such as 0.1 become 1/10.
    fn from_real(x: f64) -> Self;
    fn to_real(&self) -> f64;

    fn from_usize(n: usize) -> Self {
        let mut acc = Self::zero();
        let mut bit = Self::one();
        let mut n = n;
        while n > 0 {
            if n & 1 == 1 {
                acc = acc + bit.clone();
            }
            bit = bit.clone() + bit;
            n >>= 1;
        }
        acc
    }

    fn powu(&self, n: u32) -> Self {
        let mut out = Self::one();
        for _ in 0..n {
            out = out * self.clone();
        }
        out
    }

    fn max_of(a: Self, b: Self) -> Self {
        if a >= b {
            a
        } else {
            b
        }
    }

    fn min_of(a: Self, b: Self) -> Self {
        if a <= b {
            a
        } else {
            b
        }
    }
}

impl Scalar for f64 {
    fn from_real(x: f64) -> Self {
        x
    }

    fn to_real(&self) -> f64 {
        *self
    }

    fn from_usize(n: usize) -> Self {
        n as f64
    }

    fn powu(&self, n: u32) -> Self {
        self.powi(n as i32)
    }
}

impl Scalar for BigRational {
    fn from_real(x: f64) -> Self {
        assert!(x.is_finite(), "cannot represent {x} exactly");
        if x == 0.0 {
            return BigRational::zero();
        }
        if let Some(r) = Ratio::<i64>::approximate_float(x) {
            if (*r.numer() as f64) / (*r.denom() as f64) == x {
                return BigRational::new(BigInt::from(*r.numer()), BigInt::from(*r.denom()));
            }
        }
        BigRational::from_float(x).expect("finite float")
    }

    fn to_real(&self) -> f64 {
        ToPrimitive::to_f64(self).unwrap_or(f64::NAN)
    }

    fn from_usize(n: usize) -> Self {
        BigRational::from_integer(BigInt::from(n))
    }
}

/// Sum with a fixed left-to-right order.
pub fn ordered_sum<S: Scalar, I: IntoIterator<Item = S>>(items: I) -> S {
    items.into_iter().fold(S::zero(), |acc, x| acc + x)
}
