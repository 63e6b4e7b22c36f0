//! Scalar kernels: q-Pochhammer symbols, the entropy `H`, the current
//! constant `J`, the two-layer step weight `W`, and extended-real helpers.

use serde::{Deserialize, Serialize};

use crate::error::{AsepError, Result};
use crate::scalar::Scalar;

/// Arithmetic backend for computations that have both an exact and an
/// approximate implementation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum NumericMode {
    /// `BigRational` arithmetic on the exact dyadic values of the inputs.
    ExactRational,
    /// Floating point with renormalization; `tol` bounds certified errors.
    LogFloat { tol: f64 },
}

impl NumericMode {
    /// Truncation tolerance used in exact mode, where only the matrix
    /// truncation (not arithmetic) introduces error.
    pub const EXACT_TRUNCATION_TOL: f64 = 1e-12;

    pub fn float() -> Self {
        NumericMode::LogFloat { tol: 1e-12 }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            NumericMode::ExactRational => Ok(()),
            NumericMode::LogFloat { tol } if tol > 0.0 && tol <= 1e-6 => Ok(()),
            NumericMode::LogFloat { tol } => {
                Err(AsepError::Domain(format!("float tolerance {tol} not in (0, 1e-6]")))
            }
        }
    }

    /// Tolerance for truncation certificates.
    pub fn tol(&self) -> f64 {
        match *self {
            NumericMode::ExactRational => Self::EXACT_TRUNCATION_TOL,
            NumericMode::LogFloat { tol } => tol,
        }
    }
}

impl Default for NumericMode {
    fn default() -> Self {
        Self::float()
    }
}

/// `(z; q)_n = ∏_{j<n} (1 − z q^j)`.
pub fn qpochhammer<S: Scalar>(z: &S, q: &S, n: usize) -> S {
    let mut acc = S::one();
    let mut qj = S::one();
    for _ in 0..n {
        acc = acc * (S::one() - z.clone() * qj.clone());
        qj = qj * q.clone();
    }
    acc
}

/// `(z; q)_k` for `k = 0..=n`.
pub fn qpochhammer_prefix<S: Scalar>(z: &S, q: &S, n: usize) -> Vec<S> {
    let mut out = Vec::with_capacity(n + 1);
    let mut acc = S::one();
    let mut qj = S::one();
    out.push(acc.clone());
    for _ in 0..n {
        acc = acc * (S::one() - z.clone() * qj.clone());
        qj = qj * q.clone();
        out.push(acc.clone());
    }
    out
}

/// Value of `(z; q)_∞` together with its truncation certificate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InfiniteProduct {
    pub value: f64,
    /// Number of factors multiplied.
    pub terms: usize,
    /// Bound on `|true/value − 1|`.
    pub rel_error: f64,
}

/// `(z; q)_∞`, stopping at the first `K` with `|z| q^K < tol/2`.
///
/// The neglected factors satisfy `|log ∏_{j≥K}(1 − z q^j)| ≤ 2|z|q^K/(1−q)`
/// once `|z| q^K ≤ 1/2`, which gives the reported relative error.
pub fn qpochhammer_inf(z: f64, q: f64, tol: f64) -> Result<InfiniteProduct> {
    if !(0.0..1.0).contains(&q) {
        return Err(AsepError::Domain(format!("q = {q} not in [0, 1)")));
    }
    if !z.is_finite() || !(tol > 0.0) {
        return Err(AsepError::Domain("z must be finite and tol positive".into()));
    }
    let mut value = 1.0;
    let mut qk = 1.0;
    let mut k = 0usize;
    while z.abs() * qk >= tol / 2.0 {
        value *= 1.0 - z * qk;
        qk *= q;
        k += 1;
        if k > 1_000_000 {
            return Err(AsepError::Truncation { bound: z.abs() * qk, tol });
        }
    }
    let rel_error = (2.0 * z.abs() * qk / (1.0 - q)).exp_m1();
    Ok(InfiniteProduct { value, terms: k, rel_error })
}

/// `x log x + (1 − x) log(1 − x)` on `[0, 1]` (with `0 log 0 = 0`), `+∞`
/// elsewhere.
pub fn entropy_h(x: f64) -> f64 {
    if !(0.0..=1.0).contains(&x) {
        return f64::INFINITY;
    }
    xlogx(x) + xlogx(1.0 - x)
}

fn xlogx(x: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * x.ln()
    }
}

/// `J(a, b)`: `a/(1+a)²` if `a > 1`, `b/(1+b)²` if `b > 1`, else `1/4`.
pub fn current_j(a: f64, b: f64) -> f64 {
    if a > 1.0 {
        a / ((1.0 + a) * (1.0 + a))
    } else if b > 1.0 {
        b / ((1.0 + b) * (1.0 + b))
    } else {
        0.25
    }
}

/// Local weight `W(x | u, v)` of a two-layer step whose layers move by
/// `(u, v)` and whose gap after the step is `x`. Uses `0^0 = 1`.
pub fn step_weight<S: Scalar>(x: usize, u: bool, v: bool, q: &S, c: &S, d: &S) -> S {
    let qx = q.pow_u(x);
    match (u, v) {
        (true, false) => S::one() - qx,
        (true, true) => S::one() + d.clone() * qx,
        (false, false) => S::one() + c.clone() * qx,
        (false, true) => S::one() - c.clone() * d.clone() * qx,
    }
}

/// Extended-real product with `0 · (±∞) = 0`.
pub fn ext_mul(x: f64, y: f64) -> f64 {
    if x == 0.0 || y == 0.0 {
        0.0
    } else {
        x * y
    }
}

/// `log x` with `log 0 = −∞`.
pub fn ext_ln(x: f64) -> f64 {
    if x == 0.0 {
        f64::NEG_INFINITY
    } else {
        x.ln()
    }
}

/// Stable `log Σ exp(x_i)`; `−∞` for an empty or all-`−∞` input.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}
