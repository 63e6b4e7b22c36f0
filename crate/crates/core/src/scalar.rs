//! Numeric backends shared by the exact and floating-point code paths.
//!
//! Every algorithm that has to be checked *exactly* is written once against
//! [`Scalar`] and instantiated with `f64` or [`BigRational`].

use std::fmt::Debug;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{Num, Signed, ToPrimitive};

/// Field operations needed by the transfer-matrix code.
pub trait Scalar: Num + Clone + PartialOrd + Debug + Send + Sync {
    /// Exact for `BigRational` (every finite double is a dyadic rational).
    fn from_f64_exact(x: f64) -> Self;
    fn to_f64_lossy(&self) -> f64;
    /// Natural logarithm of a positive value, computed without overflow.
    fn ln_positive(&self) -> f64;

    fn pow_u(&self, k: usize) -> Self {
        let mut acc = Self::one();
        let mut base = self.clone();
        let mut e = k;
        while e > 0 {
            if e & 1 == 1 {
                acc = acc * base.clone();
            }
            base = base.clone() * base;
            e >>= 1;
        }
        acc
    }
}

impl Scalar for f64 {
    fn from_f64_exact(x: f64) -> Self {
        x
    }
    fn to_f64_lossy(&self) -> f64 {
        *self
    }
    fn ln_positive(&self) -> f64 {
        self.ln()
    }
}

impl Scalar for BigRational {
    /// The shortest decimal that rounds to `x`, so `0.3` becomes `3/10`
    /// rather than its 53-bit binary expansion.
    fn from_f64_exact(x: f64) -> Self {
        assert!(x.is_finite(), "finite input");
        let text = format!("{x}");
        let (int, frac) = text.split_once('.').unwrap_or((&text, ""));
        let digits: BigInt = format!("{int}{frac}").parse().expect("decimal digits");
        BigRational::new(digits, BigInt::from(10u32).pow(frac.len() as u32))
    }
    fn to_f64_lossy(&self) -> f64 {
        self.to_f64().unwrap_or_else(|| self.ln_positive().exp())
    }
    fn ln_positive(&self) -> f64 {
        ln_bigint(self.numer()) - ln_bigint(self.denom())
    }
}

fn ln_bigint(x: &BigInt) -> f64 {
    let bits = x.bits();
    if bits <= 1000 {
        return x.to_f64().unwrap_or(f64::NAN).abs().ln();
    }
    let shift = bits - 64;
    let top: BigInt = x.abs() >> shift;
    top.to_f64().unwrap().ln() + shift as f64 * std::f64::consts::LN_2
}

/// Exact `p/q` from integers.
pub fn ratio(p: i64, q: i64) -> BigRational {
    BigRational::new(BigInt::from(p), BigInt::from(q))
}

/// `|x|` for any signed scalar.
pub fn abs<S: Scalar>(x: &S) -> S {
    if *x < S::zero() {
        S::zero() - x.clone()
    } else {
        x.clone()
    }
}

/// Total variation distance `(1/2) Σ|p_i − q_i|`.
pub fn total_variation<S: Scalar>(p: &[S], q: &[S]) -> S {
    assert_eq!(p.len(), q.len());
    let mut acc = S::zero();
    for (x, y) in p.iter().zip(q) {
        acc = acc + abs(&(x.clone() - y.clone()));
    }
    let two = S::one() + S::one();
    acc / two
}

