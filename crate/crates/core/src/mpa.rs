//! Matrix product ansatz in the Enaud–Derrida representation.
//!
//! The matrix index is the gap `λ1 − λ2` of the two-layer picture, so a
//! dimension-`M` truncation drops exactly the gap paths that reach `M`.
//! [`truncation`] picks `M` with a certified relative tail bound.

use std::collections::BTreeMap;

use num_rational::BigRational;
use serde::Serialize;

use crate::ctmc;
use crate::error::{AsepError, Result};
use crate::params::{BoundaryRates, FanParams};
use crate::qkernel::{current_j, qpochhammer_inf, qpochhammer_prefix, NumericMode};
use crate::scalar::Scalar;

/// `(a, b, c, d, q)` converted into a scalar backend.
#[derive(Debug, Clone)]
pub struct FanValues<S> {
    pub a: S,
    pub b: S,
    pub c: S,
    pub d: S,
    pub q: S,
}

impl<S: Scalar> FanValues<S> {
    pub fn from_params(p: &FanParams) -> Self {
        Self {
            a: S::from_f64_exact(p.a),
            b: S::from_f64_exact(p.b),
            c: S::from_f64_exact(p.c),
            d: S::from_f64_exact(p.d),
            q: S::from_f64_exact(p.q),
        }
    }
}

/// Truncated Enaud–Derrida matrices. `D` is upper and `E` lower bidiagonal.
#[derive(Debug, Clone)]
pub struct EdRep<S> {
    pub params: FanParams,
    pub dim: usize,
    /// `D[k][k]`.
    pub d_diag: Vec<S>,
    /// `D[k][k+1]`.
    pub d_sup: Vec<S>,
    /// `E[k][k]`.
    pub e_diag: Vec<S>,
    /// `E[k+1][k]`.
    pub e_sub: Vec<S>,
    pub w: Vec<S>,
    pub v: Vec<S>,
}

pub fn build_ed<S: Scalar>(p: &FanParams, dim: usize) -> Result<EdRep<S>> {
    p.require_fan()?;
    if dim < 2 {
        return Err(AsepError::Domain(format!("truncation dimension {dim} < 2")));
    }
    let f = FanValues::<S>::from_params(p);
    let one = S::one();
    let inv = one.clone() / (one.clone() - f.q.clone());
    let cd = f.c.clone() * f.d.clone();
    let mut d_diag = Vec::with_capacity(dim);
    let mut e_diag = Vec::with_capacity(dim);
    let mut d_sup = Vec::with_capacity(dim - 1);
    let mut e_sub = Vec::with_capacity(dim - 1);
    let mut qk = one.clone();
    for k in 0..dim {
        d_diag.push((one.clone() + qk.clone() * f.d.clone()) * inv.clone());
        e_diag.push((one.clone() + qk.clone() * f.c.clone()) * inv.clone());
        if k + 1 < dim {
            e_sub.push((one.clone() - qk.clone() * cd.clone()) * inv.clone());
        }
        qk = qk * f.q.clone();
        if k + 1 < dim {
            d_sup.push((one.clone() - qk.clone()) * inv.clone());
        }
    }
    let cd_poch = qpochhammer_prefix(&cd, &f.q, dim);
    let q_poch = qpochhammer_prefix(&f.q, &f.q, dim);
    let mut w = Vec::with_capacity(dim);
    let mut v = Vec::with_capacity(dim);
    let (mut ak, mut bk) = (one.clone(), one);
    for k in 0..dim {
        w.push(ak.clone());
        v.push(bk.clone() * cd_poch[k].clone() / q_poch[k].clone());
        ak = ak * f.a.clone();
        bk = bk * f.b.clone();
    }
    Ok(EdRep { params: *p, dim, d_diag, d_sup, e_diag, e_sub, w, v })
}

impl<S: Scalar> EdRep<S> {
    pub fn dense_d(&self) -> Vec<Vec<S>> {
        let mut m = vec![vec![S::zero(); self.dim]; self.dim];
        for k in 0..self.dim {
            m[k][k] = self.d_diag[k].clone();
            if k + 1 < self.dim {
                m[k][k + 1] = self.d_sup[k].clone();
            }
        }
        m
    }

    pub fn dense_e(&self) -> Vec<Vec<S>> {
        let mut m = vec![vec![S::zero(); self.dim]; self.dim];
        for k in 0..self.dim {
            m[k][k] = self.e_diag[k].clone();
            if k + 1 < self.dim {
                m[k + 1][k] = self.e_sub[k].clone();
            }
        }
        m
    }
}

/// Boundary rates in a scalar backend.
#[derive(Debug, Clone)]
pub struct ScalarRates<S> {
    pub alpha: S,
    pub beta: S,
    pub gamma: S,
    pub delta: S,
    pub q: S,
}

impl<S: Scalar> ScalarRates<S> {
    pub fn from_rates(r: &BoundaryRates) -> Self {
        Self {
            alpha: S::from_f64_exact(r.alpha),
            beta: S::from_f64_exact(r.beta),
            gamma: S::from_f64_exact(r.gamma),
            delta: S::from_f64_exact(r.delta),
            q: S::from_f64_exact(r.q),
        }
    }

    /// Rates whose image under the reparameterization is exactly `p` in
    /// this backend.
    pub fn from_fan(p: &FanParams) -> Self {
        let f = FanValues::<S>::from_params(p);
        let one = S::one();
        let one_q = one.clone() - f.q.clone();
        let alpha = one_q.clone() / ((one.clone() + f.a.clone()) * (one.clone() + f.c.clone()));
        let beta = one_q / ((one.clone() + f.b.clone()) * (one + f.d.clone()));
        let gamma = S::zero() - alpha.clone() * f.a * f.c;
        let delta = S::zero() - beta.clone() * f.b * f.d;
        Self { alpha, beta, gamma, delta, q: f.q }
    }
}

/// Max-abs residuals of the three DEHP relations on the coordinates that
/// truncation leaves intact.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DehpResidual {
    pub bulk: f64,
    pub left: f64,
    pub right: f64,
    /// All three residuals vanish identically in the backend.
    pub exact_zero: bool,
}

impl DehpResidual {
    pub fn max(&self) -> f64 {
        self.bulk.max(self.left).max(self.right)
    }
}

pub fn check_dehp<S: Scalar>(rep: &EdRep<S>, rates: &ScalarRates<S>) -> DehpResidual {
    let m = rep.dim;
    let d = rep.dense_d();
    let e = rep.dense_e();
    let mut all_zero = true;
    let mut track = |x: S, acc: &mut f64| {
        if !x.is_zero() {
            all_zero = false;
        }
        let v = x.to_f64_lossy().abs();
        if v > *acc {
            *acc = v;
        }
    };

    let mut bulk = 0.0;
    let inner = m.saturating_sub(2);
    for i in 0..inner {
        for j in 0..inner {
            let mut de = S::zero();
            let mut ed = S::zero();
            for k in 0..m {
                de = de + d[i][k].clone() * e[k][j].clone();
                ed = ed + e[i][k].clone() * d[k][j].clone();
            }
            let r = de - rates.q.clone() * ed - d[i][j].clone() - e[i][j].clone();
            track(r, &mut bulk);
        }
    }

    let mut left = 0.0;
    for j in 0..m - 1 {
        let mut acc = S::zero();
        for i in 0..m {
            acc = acc
                + rep.w[i].clone()
                    * (rates.alpha.clone() * e[i][j].clone() - rates.gamma.clone() * d[i][j].clone());
        }
        track(acc - rep.w[j].clone(), &mut left);
    }

    let mut right = 0.0;
    for i in 0..m - 1 {
        let mut acc = S::zero();
        for k in 0..m {
            acc = acc
                + (rates.beta.clone() * d[i][k].clone() - rates.delta.clone() * e[i][k].clone())
                    * rep.v[k].clone();
        }
        track(acc - rep.v[i].clone(), &mut right);
    }
    DehpResidual { bulk, left, right, exact_zero: all_zero }
}

/// `⟨W|V⟩` by direct summation and by its closed product form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WvInner {
    pub sum: f64,
    pub closed_form: f64,
    /// Relative bound on the neglected tail of the sum.
    pub tail_bound: f64,
    pub terms: usize,
}

/// Evaluates `Σ_k a^k b^k (cd;q)_k/(q;q)_k` against `(abcd;q)_∞/(ab;q)_∞`.
pub fn wv_inner(p: &FanParams, mode: NumericMode) -> Result<WvInner> {
    p.require_fan()?;
    mode.validate()?;
    let tol = mode.tol();
    let ab = p.a * p.b;
    let qq = qpochhammer_inf(p.q, p.q, tol)?;
    let num = qpochhammer_inf(ab * p.c * p.d, p.q, tol)?;
    let den = qpochhammer_inf(ab, p.q, tol)?;
    let closed_form = num.value / den.value;

    // Each term is at most (ab)^k/(q;q)_∞, and the sum is at least 1.
    let q_inf_lower = qq.value / (1.0 + qq.rel_error);
    let terms = if ab == 0.0 {
        1
    } else {
        let need = ((tol * (1.0 - ab) * q_inf_lower).ln() / ab.ln()).ceil();
        need.max(1.0) as usize
    };
    let sum = match mode {
        NumericMode::ExactRational => {
            let f = FanValues::<BigRational>::from_params(p);
            wv_sum(&f, terms).to_f64_lossy()
        }
        NumericMode::LogFloat { .. } => wv_sum(&FanValues::<f64>::from_params(p), terms),
    };
    let tail_bound = if ab == 0.0 { 0.0 } else { ab.powi(terms as i32) / ((1.0 - ab) * q_inf_lower) };
    Ok(WvInner { sum, closed_form, tail_bound, terms })
}

fn wv_sum<S: Scalar>(f: &FanValues<S>, terms: usize) -> S {
    let ab = f.a.clone() * f.b.clone();
    let cd = f.c.clone() * f.d.clone();
    let cd_poch = qpochhammer_prefix(&cd, &f.q, terms);
    let q_poch = qpochhammer_prefix(&f.q, &f.q, terms);
    let mut acc = S::zero();
    let mut abk = S::one();
    for k in 0..terms {
        acc = acc + abk.clone() * cd_poch[k].clone() / q_poch[k].clone();
        abk = abk * ab.clone();
    }
    acc
}

/// Matrix truncation with its certificate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Truncation {
    /// Matrix dimension `M`: gaps `0..M` are kept.
    pub dim: usize,
    /// `M − N`: the smallest initial gap whose paths may be dropped.
    pub g_cut: usize,
    /// Bound on the relative error of every truncated partition sum, hence
    /// on the absolute error of every probability.
    pub certified_error: f64,
}

/// A value together with the truncation that produced it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Certified<T> {
    pub value: T,
    pub certified_error: f64,
    pub dim: usize,
}

/// Chooses `M = N + G` so that the weight of gap paths reaching `M` is at
/// most `tol` relative to the truncated partition sum.
///
/// A path with a gap `≥ M` has initial gap `g₀ ≥ G`. With every step weight
/// at most 1, `V_g ≤ b^g/(q;q)_∞ ≤ t^g/(q;q)_∞` for any `t ≥ b`, and
/// summing `t^{Δg}` over the four step types per site, the paths with
/// `g₀ = k` weigh at most `(at)^k ((1+t)²/t)^N/(q;q)_∞`. The bound is
/// geometric in `k` whenever `t < 1/a`; `t` is optimized over a grid.
pub fn truncation(p: &FanParams, n: usize, tol: f64) -> Result<Truncation> {
    p.require_fan()?;
    if !(tol > 0.0) {
        return Err(AsepError::Domain(format!("tolerance {tol} must be positive")));
    }
    let exact_dim = (n + 1).max(2);
    if p.a == 0.0 || p.b == 0.0 {
        // g₀ = 0 or g_N = 0 is forced, so no gap exceeds N.
        return Ok(Truncation { dim: exact_dim, g_cut: exact_dim - n, certified_error: 0.0 });
    }
    let qq = qpochhammer_inf(p.q, p.q, 1e-15)?;
    let log_q_inf = (qq.value / (1.0 + qq.rel_error)).ln();
    let log_z_lower = log_partition_dim(p, n, exact_dim);
    let log_tol = tol.ln();
    let hi = (1.0 / p.a) * (1.0 - 1e-9);
    if hi <= p.b {
        return Err(AsepError::OutsideFan { ab: p.a * p.b });
    }
    let mut best: Option<usize> = None;
    let steps = 256;
    for i in 0..=steps {
        let t = p.b * (hi / p.b).powf(i as f64 / steps as f64);
        let at = p.a * t;
        if at >= 1.0 {
            continue;
        }
        let log_coef = n as f64 * ((1.0 + t) * (1.0 + t) / t).ln() - (1.0 - at).ln() - log_q_inf;
        let excess = log_coef - log_z_lower - log_tol;
        let k = if excess <= 0.0 { 1 } else { (excess / -at.ln()).ceil() as usize };
        best = Some(best.map_or(k, |b| b.min(k)));
    }
    let g_cut = best.unwrap_or(1).max(1);
    let dim = (n + g_cut).max(2);
    let certified_error = truncation_bound(p, n, dim - n, log_z_lower, log_q_inf);
    if certified_error > tol {
        return Err(AsepError::Truncation { bound: certified_error, tol });
    }
    Ok(Truncation { dim, g_cut: dim - n, certified_error })
}

fn truncation_bound(p: &FanParams, n: usize, g_cut: usize, log_z_lower: f64, log_q_inf: f64) -> f64 {
    let hi = (1.0 / p.a) * (1.0 - 1e-9);
    let steps = 256;
    let mut best = f64::INFINITY;
    for i in 0..=steps {
        let t = p.b * (hi / p.b).powf(i as f64 / steps as f64);
        let at = p.a * t;
        if at >= 1.0 {
            continue;
        }
        let log_bound = g_cut as f64 * at.ln() + n as f64 * ((1.0 + t) * (1.0 + t) / t).ln()
            - (1.0 - at).ln()
            - log_q_inf
            - log_z_lower;
        best = best.min(log_bound.exp());
    }
    best
}

/// Step matrices `(1−q)D`, `(1−q)E` conjugated by `diag(t^k)`, with the
/// correspondingly rescaled boundary vectors. The conjugation leaves every
/// contraction `⟨W|…|V⟩` unchanged.
#[derive(Debug, Clone)]
pub(crate) struct StepMatrices<S> {
    pub dd: Vec<S>,
    pub du: Vec<S>,
    pub ed: Vec<S>,
    pub el: Vec<S>,
    pub w: Vec<S>,
    pub v: Vec<S>,
}

impl<S: Scalar> StepMatrices<S> {
    pub fn raw(p: &FanParams, dim: usize) -> Self {
        let f = FanValues::<S>::from_params(p);
        Self::scaled(&f, dim, S::one(), f.a.clone(), f.b.clone())
    }

    fn scaled(f: &FanValues<S>, dim: usize, t: S, w_base: S, v_base: S) -> Self {
        let one = S::one();
        let cd = f.c.clone() * f.d.clone();
        let cd_poch = qpochhammer_prefix(&cd, &f.q, dim);
        let q_poch = qpochhammer_prefix(&f.q, &f.q, dim);
        let mut m = StepMatrices {
            dd: Vec::with_capacity(dim),
            du: Vec::with_capacity(dim),
            ed: Vec::with_capacity(dim),
            el: Vec::with_capacity(dim),
            w: Vec::with_capacity(dim),
            v: Vec::with_capacity(dim),
        };
        let mut qk = one.clone();
        let (mut wk, mut vk) = (one.clone(), one.clone());
        for k in 0..dim {
            m.dd.push(one.clone() + qk.clone() * f.d.clone());
            m.ed.push(one.clone() + qk.clone() * f.c.clone());
            m.el.push((one.clone() - qk.clone() * cd.clone()) / t.clone());
            qk = qk * f.q.clone();
            m.du.push((one.clone() - qk.clone()) * t.clone());
            m.w.push(wk.clone());
            m.v.push(vk.clone() * cd_poch[k].clone() / q_poch[k].clone());
            wk = wk * w_base.clone();
            vk = vk * v_base.clone();
        }
        m
    }

    pub fn dim(&self) -> usize {
        self.dd.len()
    }

    /// `x ↦ x·(1−q)D` (particle) or `x ↦ x·(1−q)E` (hole).
    pub fn apply(&self, x: &[S], particle: bool, out: &mut [S]) {
        let m = self.dim();
        if particle {
            for j in 0..m {
                let mut acc = x[j].clone() * self.dd[j].clone();
                if j > 0 {
                    acc = acc + x[j - 1].clone() * self.du[j - 1].clone();
                }
                out[j] = acc;
            }
        } else {
            for j in 0..m {
                let mut acc = x[j].clone() * self.ed[j].clone();
                if j + 1 < m {
                    acc = acc + x[j + 1].clone() * self.el[j].clone();
                }
                out[j] = acc;
            }
        }
    }

    pub fn apply_sum(&self, x: &[S], out: &mut [S]) {
        let m = self.dim();
        for j in 0..m {
            let mut acc = x[j].clone() * (self.dd[j].clone() + self.ed[j].clone());
            if j > 0 {
                acc = acc + x[j - 1].clone() * self.du[j - 1].clone();
            }
            if j + 1 < m {
                acc = acc + x[j + 1].clone() * self.el[j].clone();
            }
            out[j] = acc;
        }
    }

    pub fn dot_v(&self, x: &[S]) -> S {
        x.iter().zip(&self.v).fold(S::zero(), |acc, (a, b)| acc + a.clone() * b.clone())
    }
}

impl StepMatrices<f64> {
    /// Conjugation by `t = √(b/a)`, which makes both boundary vectors decay
    /// like `√(ab)^k` and keeps floating-point ranges moderate.
    pub fn balanced(p: &FanParams, dim: usize) -> Self {
        let f = FanValues::<f64>::from_params(p);
        if p.a > 0.0 && p.b > 0.0 {
            let t = (p.b / p.a).sqrt();
            let s = (p.a * p.b).sqrt();
            Self::scaled(&f, dim, t, s, s)
        } else {
            Self::scaled(&f, dim, 1.0, p.a, p.b)
        }
    }
}

/// Divides `x` by its maximum and returns the log of the divisor.
pub(crate) fn renormalize(x: &mut [f64]) -> f64 {
    let m = x.iter().cloned().fold(0.0, f64::max);
    if m == 0.0 || !m.is_finite() {
        return if m == 0.0 { f64::NEG_INFINITY } else { f64::NAN };
    }
    for v in x.iter_mut() {
        *v /= m;
    }
    m.ln()
}

/// `log((1−q)^N ⟨W|(D+E)^N|V⟩)` at a fixed dimension, in renormalized
/// floating point.
fn log_partition_dim(p: &FanParams, n: usize, dim: usize) -> f64 {
    let sm = StepMatrices::balanced(p, dim);
    let mut x = sm.w.clone();
    let mut y = vec![0.0; dim];
    let mut log_scale = renormalize(&mut x);
    for _ in 0..n {
        sm.apply_sum(&x, &mut y);
        std::mem::swap(&mut x, &mut y);
        log_scale += renormalize(&mut x);
    }
    log_scale + sm.dot_v(&x).ln()
}

fn partition_exact(p: &FanParams, n: usize, dim: usize) -> BigRational {
    let sm = StepMatrices::<BigRational>::raw(p, dim);
    let mut x = sm.w.clone();
    let mut y = x.clone();
    for _ in 0..n {
        sm.apply_sum(&x, &mut y);
        std::mem::swap(&mut x, &mut y);
    }
    sm.dot_v(&x)
}

/// `(1−q)^N ⟨W|(D+E)^N|V⟩` at a fixed dimension in any backend (no
/// rescaling, so large `N` can overflow `f64`).
pub fn partition_in<S: Scalar>(p: &FanParams, n: usize, dim: usize) -> S {
    let sm = StepMatrices::<S>::raw(p, dim);
    let mut x = sm.w.clone();
    let mut y = x.clone();
    for _ in 0..n {
        sm.apply_sum(&x, &mut y);
        std::mem::swap(&mut x, &mut y);
    }
    sm.dot_v(&x)
}

/// `log Z_N` with its truncation certificate.
pub fn partition_log_z(p: &FanParams, n: usize, mode: NumericMode) -> Result<Certified<f64>> {
    mode.validate()?;
    let tr = truncation(p, n, mode.tol())?;
    let value = match mode {
        NumericMode::ExactRational => partition_exact(p, n, tr.dim).ln_positive(),
        NumericMode::LogFloat { .. } => log_partition_dim(p, n, tr.dim),
    };
    Ok(Certified { value, certified_error: tr.certified_error, dim: tr.dim })
}

/// Index of an occupation vector: `τ₁` is the most significant bit.
pub fn config_index(tau: &[bool]) -> usize {
    tau.iter().fold(0, |acc, &t| (acc << 1) | t as usize)
}

/// Inverse of [`config_index`].
pub fn config_from_index(idx: usize, n: usize) -> Vec<bool> {
    (0..n).map(|i| (idx >> (n - 1 - i)) & 1 == 1).collect()
}

/// Unnormalized weights `⟨W|∏X_{τ_i}|V⟩` of all `2^N` configurations,
/// sharing work between common prefixes.
pub(crate) fn weight_table<S: Scalar>(sm: &StepMatrices<S>, n: usize) -> Vec<S> {
    let dim = sm.dim();
    let mut out = vec![S::zero(); 1 << n];
    let mut stack: Vec<Vec<S>> = vec![vec![S::zero(); dim]; n + 1];
    stack[0] = sm.w.clone();
    fn rec<S: Scalar>(
        sm: &StepMatrices<S>,
        depth: usize,
        n: usize,
        prefix: usize,
        stack: &mut Vec<Vec<S>>,
        out: &mut [S],
    ) {
        if depth == n {
            out[prefix] = sm.dot_v(&stack[n]);
            return;
        }
        for bit in [false, true] {
            let (lo, hi) = stack.split_at_mut(depth + 1);
            sm.apply(&lo[depth], bit, &mut hi[0]);
            rec(sm, depth + 1, n, (prefix << 1) | bit as usize, stack, out);
        }
    }
    rec(sm, 0, n, 0, &mut stack, &mut out);
    out
}

/// Exact stationary probabilities of all `2^N` configurations at a fixed
/// dimension, in any backend.
pub fn stationary_table_in<S: Scalar>(p: &FanParams, n: usize, dim: usize) -> Vec<S> {
    let sm = StepMatrices::<S>::raw(p, dim);
    normalize(weight_table(&sm, n))
}

fn normalize<S: Scalar>(mut w: Vec<S>) -> Vec<S> {
    let z = w.iter().fold(S::zero(), |acc, x| acc + x.clone());
    for x in w.iter_mut() {
        *x = x.clone() / z.clone();
    }
    w
}

pub const MAX_TABLE_N: usize = 24;

/// Stationary probabilities of all `2^N` configurations.
pub fn stationary_table(p: &FanParams, n: usize, mode: NumericMode) -> Result<Certified<Vec<f64>>> {
    mode.validate()?;
    if n > MAX_TABLE_N {
        return Err(AsepError::Resource { needed: 1u128 << n, budget: 1u128 << MAX_TABLE_N });
    }
    let tr = truncation(p, n, mode.tol())?;
    let value = match mode {
        NumericMode::ExactRational => stationary_table_in::<BigRational>(p, n, tr.dim)
            .iter()
            .map(|x| x.to_f64_lossy())
            .collect(),
        NumericMode::LogFloat { .. } => {
            normalize(weight_table(&StepMatrices::balanced(p, tr.dim), n))
        }
    };
    Ok(Certified { value, certified_error: tr.certified_error, dim: tr.dim })
}

/// `μ_N(τ)` for a single configuration.
pub fn stationary_prob(p: &FanParams, tau: &[bool], mode: NumericMode) -> Result<Certified<f64>> {
    mode.validate()?;
    let n = tau.len();
    let tr = truncation(p, n, mode.tol())?;
    fn ratio_of<S: Scalar>(sm: &StepMatrices<S>, tau: &[bool]) -> S {
        let dim = sm.dim();
        let mut x = sm.w.clone();
        let mut s = sm.w.clone();
        let mut y = vec![S::zero(); dim];
        for &t in tau {
            sm.apply(&x, t, &mut y);
            std::mem::swap(&mut x, &mut y);
            sm.apply_sum(&s, &mut y);
            std::mem::swap(&mut s, &mut y);
        }
        sm.dot_v(&x) / sm.dot_v(&s)
    }
    let value = match mode {
        NumericMode::ExactRational => {
            ratio_of(&StepMatrices::<BigRational>::raw(p, tr.dim), tau).to_f64_lossy()
        }
        NumericMode::LogFloat { .. } => {
            // Renormalize both chains by the same factor so the ratio survives.
            let sm = StepMatrices::balanced(p, tr.dim);
            let mut x = sm.w.clone();
            let mut s = sm.w.clone();
            let mut y = vec![0.0; tr.dim];
            let mut log_ratio = 0.0;
            for &t in tau {
                sm.apply(&x, t, &mut y);
                std::mem::swap(&mut x, &mut y);
                sm.apply_sum(&s, &mut y);
                std::mem::swap(&mut s, &mut y);
                let m = s.iter().cloned().fold(0.0, f64::max);
                x.iter_mut().for_each(|v| *v /= m);
                s.iter_mut().for_each(|v| *v /= m);
                let mx = x.iter().cloned().fold(0.0, f64::max);
                if mx > 0.0 {
                    x.iter_mut().for_each(|v| *v /= mx);
                    log_ratio += mx.ln();
                }
            }
            (log_ratio + sm.dot_v(&x).ln() - sm.dot_v(&s).ln()).exp()
        }
    };
    Ok(Certified { value, certified_error: tr.certified_error, dim: tr.dim })
}

/// Joint law of the partial sums `Σ_{i≤m} τ_i` at the pinned sites.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JointPmf {
    pub pins: Vec<usize>,
    /// Outcomes in lexicographic order with their probabilities.
    pub entries: Vec<(Vec<usize>, f64)>,
    pub certified_error: f64,
}

impl JointPmf {
    pub fn prob(&self, values: &[usize]) -> f64 {
        self.entries
            .binary_search_by(|(k, _)| k.as_slice().cmp(values))
            .map(|i| self.entries[i].1)
            .unwrap_or(0.0)
    }

    pub fn total(&self) -> f64 {
        self.entries.iter().map(|e| e.1).sum()
    }
}

pub const DEFAULT_STATE_BUDGET: u128 = 200_000_000;

/// Exact joint law of the height function at up to three pinned sites.
///
/// Dynamic programming over (values recorded at passed pins, current
/// height, matrix index), renormalized every step.
pub fn height_marginal_dist(
    p: &FanParams,
    n: usize,
    pins: &[usize],
    tol: f64,
    budget: u128,
) -> Result<JointPmf> {
    if pins.is_empty() || pins.len() > 3 {
        return Err(AsepError::Domain("between one and three pins are supported".into()));
    }
    if pins.windows(2).any(|w| w[0] >= w[1]) || pins[0] == 0 || *pins.last().unwrap() > n {
        return Err(AsepError::Domain(format!("pins {pins:?} must be sorted in [1, {n}]")));
    }
    let tr = truncation(p, n, tol)?;
    let dim = tr.dim;
    let last = *pins.last().unwrap();
    let records: u128 = pins[..pins.len() - 1].iter().map(|&m| m as u128 + 1).product();
    let needed = records * (last as u128 + 1) * dim as u128;
    if needed > budget {
        return Err(AsepError::Resource { needed, budget });
    }
    let sm = StepMatrices::balanced(p, dim);
    let records = records as usize;
    let hs = last + 1;
    // state[(r * hs + h) * dim + k]
    let mut cur = vec![0.0; records * hs * dim];
    cur[..dim].copy_from_slice(&sm.w);
    let mut log_scale = renormalize(&mut cur);
    let mut next = vec![0.0; cur.len()];
    let mut buf_d = vec![0.0; dim];
    let mut buf_e = vec![0.0; dim];
    let mut pin_iter = 0usize;
    let mut stride = records;
    for j in 0..last {
        next.iter_mut().for_each(|v| *v = 0.0);
        for r in 0..records {
            for h in 0..=j.min(last) {
                let base = (r * hs + h) * dim;
                let x = &cur[base..base + dim];
                if x.iter().all(|&v| v == 0.0) {
                    continue;
                }
                sm.apply(x, true, &mut buf_d);
                sm.apply(x, false, &mut buf_e);
                let up = (r * hs + h + 1) * dim;
                for k in 0..dim {
                    next[base + k] += buf_e[k];
                    next[up + k] += buf_d[k];
                }
            }
        }
        std::mem::swap(&mut cur, &mut next);
        let site = j + 1;
        if pin_iter + 1 < pins.len() && site == pins[pin_iter] {
            // Record the current height into the record digit for this pin.
            stride /= pins[pin_iter] + 1;
            next.iter_mut().for_each(|v| *v = 0.0);
            let rad = pins[pin_iter] + 1;
            for r in (0..records).filter(|r| (r / stride).is_multiple_of(rad)) {
                for h in 0..=site {
                    let src = (r * hs + h) * dim;
                    let dst = ((r + h * stride) * hs + h) * dim;
                    for k in 0..dim {
                        next[dst + k] += cur[src + k];
                    }
                }
            }
            std::mem::swap(&mut cur, &mut next);
            pin_iter += 1;
        }
        log_scale += renormalize(&mut cur);
    }
    // Finish the remaining sites without tracking the height.
    let mut tails: Vec<f64> = vec![0.0; records * hs];
    let mut total_weights = Vec::with_capacity(records * hs);
    {
        let mut y = vec![0.0; dim];
        for r in 0..records {
            for h in 0..hs {
                let base = (r * hs + h) * dim;
                let mut x = cur[base..base + dim].to_vec();
                let mut ls = 0.0;
                if x.iter().any(|&v| v > 0.0) {
                    for _ in last..n {
                        sm.apply_sum(&x, &mut y);
                        std::mem::swap(&mut x, &mut y);
                        ls += renormalize(&mut x);
                    }
                    tails[r * hs + h] = ls + sm.dot_v(&x).ln();
                } else {
                    tails[r * hs + h] = f64::NEG_INFINITY;
                }
                total_weights.push(tails[r * hs + h]);
            }
        }
    }
    let _ = log_scale;
    let log_total = crate::qkernel::log_sum_exp(&total_weights);
    let mut map = BTreeMap::new();
    let radices: Vec<usize> = pins[..pins.len() - 1].iter().map(|&m| m + 1).collect();
    for r in 0..records {
        let mut digits = Vec::with_capacity(pins.len());
        let mut rem = r;
        let mut div: usize = radices.iter().product();
        for &rad in &radices {
            div /= rad;
            digits.push(rem / div);
            rem %= div;
        }
        for h in 0..hs {
            let lw = tails[r * hs + h];
            if lw == f64::NEG_INFINITY {
                continue;
            }
            let mut key = digits.clone();
            key.push(h);
            let prob = (lw - log_total).exp();
            if prob > 0.0 {
                map.insert(key, prob);
            }
        }
    }
    Ok(JointPmf { pins: pins.to_vec(), entries: map.into_iter().collect(), certified_error: tr.certified_error })
}

/// `‖μ Q‖_∞` for an arbitrary measure `μ` on `{0,1}^N`.
pub fn generator_residual(rates: &BoundaryRates, n: usize, mu: &[f64]) -> f64 {
    assert_eq!(mu.len(), 1 << n);
    let mut res = vec![0.0; mu.len()];
    for (idx, &m) in mu.iter().enumerate() {
        let tau = config_from_index(idx, n);
        for (next, rate) in ctmc::enabled_transitions(&tau, rates) {
            res[idx] -= m * rate;
            res[config_index(&next)] += m * rate;
        }
    }
    res.iter().fold(0.0, |acc, v| acc.max(v.abs()))
}

pub const MAX_GENERATOR_N: usize = 12;

/// `‖μ_N Q‖_∞` for the matrix-product measure and the generator built
/// directly from the jump rates.
pub fn generator_stationarity_check(rates: &BoundaryRates, n: usize, tol: f64) -> Result<f64> {
    if n == 0 || n > MAX_GENERATOR_N {
        return Err(AsepError::Domain(format!("N = {n} not in [1, {MAX_GENERATOR_N}]")));
    }
    let p = rates.to_fan()?;
    let mode = NumericMode::LogFloat { tol };
    let table = stationary_table(&p, n, mode)?;
    Ok(generator_residual(rates, n, &table.value))
}

/// One row of [`asymptotic_log_z_scan`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScanPoint {
    pub n: usize,
    /// `(1/N) log Z_N + log J(a, b)`.
    pub deviation: f64,
    pub certified_error: f64,
}

pub fn asymptotic_log_z_scan(p: &FanParams, ns: &[usize], tol: f64) -> Result<Vec<ScanPoint>> {
    let log_j = current_j(p.a, p.b).ln();
    ns.iter()
        .map(|&n| {
            let lz = partition_log_z(p, n, NumericMode::LogFloat { tol })?;
            Ok(ScanPoint { n, deviation: lz.value / n as f64 + log_j, certified_error: lz.certified_error })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::ratio;
    use approx::assert_relative_eq;
    use num_traits::Zero;

    fn fan(a: f64, b: f64, c: f64, d: f64, q: f64) -> FanParams {
        FanParams::new(a, b, c, d, q).unwrap()
    }

    #[test]
    fn build_ed_tasep_m2() {
        let rep = build_ed::<f64>(&fan(0.0, 0.0, 0.0, 0.0, 0.0), 2).unwrap();
        assert_eq!(rep.dense_d(), vec![vec![1.0, 1.0], vec![0.0, 1.0]]);
        assert_eq!(rep.dense_e(), vec![vec![1.0, 0.0], vec![1.0, 1.0]]);
        assert_eq!(rep.w, vec![1.0, 0.0]);
        assert_eq!(rep.v, vec![1.0, 0.0]);
    }

    #[test]
    fn build_ed_entries() {
        let rep = build_ed::<f64>(&fan(0.3, 0.4, -0.5, -0.5, 0.5), 4).unwrap();
        assert_relative_eq!(rep.d_diag[1], 1.5, epsilon = 1e-15);
        assert_eq!(rep.v[0], 1.0);
        assert!(build_ed::<f64>(&fan(2.0, 2.0, 0.0, 0.0, 0.0), 4).is_err());
        assert!(build_ed::<f64>(&fan(0.0, 0.0, 0.0, 0.0, 0.0), 1).is_err());
    }

    #[test]
    fn dehp_exact_at_tasep() {
        let p = fan(0.0, 0.0, 0.0, 0.0, 0.0);
        let rep = build_ed::<BigRational>(&p, 8).unwrap();
        let rates = ScalarRates::from_rates(&BoundaryRates::tasep(1.0, 1.0).unwrap());
        let r = check_dehp(&rep, &rates);
        assert!(r.exact_zero);
    }

    #[test]
    fn dehp_exact_general_point_in_rationals() {
        let p = fan(0.5, 0.25, -0.375, -0.125, 0.25);
        let rep = build_ed::<BigRational>(&p, 10).unwrap();
        assert!(check_dehp(&rep, &ScalarRates::from_fan(&p)).exact_zero);
    }

    #[test]
    fn dehp_float_and_negative_control() {
        let rates = BoundaryRates::new(0.6, 0.7, 0.2, 0.1, 0.3).unwrap();
        let p = rates.to_fan().unwrap();
        let mut rep = build_ed::<f64>(&p, 16).unwrap();
        let r = check_dehp(&rep, &ScalarRates::from_rates(&rates));
        assert!(r.max() <= 1e-13, "{r:?}");
        rep.d_diag[0] += 1e-3;
        let r = check_dehp(&rep, &ScalarRates::from_rates(&rates));
        assert!(r.bulk >= 1e-4);
    }

    #[test]
    fn wv_inner_examples() {
        let w = wv_inner(&fan(1.0, 0.5, 0.0, 0.0, 0.0), NumericMode::float()).unwrap();
        assert_relative_eq!(w.sum, 2.0, epsilon = 1e-11);
        assert_relative_eq!(w.closed_form, 2.0, epsilon = 1e-12);
        let w = wv_inner(&fan(0.0, 0.7, -0.2, -0.3, 0.4), NumericMode::float()).unwrap();
        assert_eq!(w.sum, 1.0);
        assert_relative_eq!(w.closed_form, 1.0, epsilon = 1e-15);
        let w = wv_inner(&fan(0.5, 0.5, -0.4, -0.4, 0.3), NumericMode::float()).unwrap();
        assert!((w.sum - w.closed_form).abs() <= 1e-12, "{w:?}");
        let x = wv_inner(&fan(0.5, 0.5, -0.4, -0.4, 0.3), NumericMode::ExactRational).unwrap();
        assert!((x.sum - x.closed_form).abs() <= 1e-12);
    }

    #[test]
    fn n1_two_state_balance() {
        for (al, be, ga, de, q) in [(1.0, 1.0, 0.0, 0.0, 0.0), (0.6, 0.7, 0.2, 0.1, 0.3), (0.3, 2.0, 0.5, 0.0, 0.6)] {
            let r = BoundaryRates::new(al, be, ga, de, q).unwrap();
            let p = r.to_fan().unwrap();
            let got = stationary_prob(&p, &[true], NumericMode::float()).unwrap();
            assert_relative_eq!(got.value, (al + de) / (al + be + ga + de), epsilon = 1e-12);
        }
    }

    #[test]
    fn n2_tasep_table() {
        let p = fan(0.0, 0.0, 0.0, 0.0, 0.0);
        let t = stationary_table_in::<BigRational>(&p, 2, 3);
        assert_eq!(t, vec![ratio(1, 5), ratio(1, 5), ratio(2, 5), ratio(1, 5)]);
        let z: BigRational = partition_in(&p, 2, 3);
        assert_eq!(z, ratio(5, 1));
        let f = stationary_table(&p, 2, NumericMode::float()).unwrap();
        for (x, y) in f.value.iter().zip([0.2, 0.2, 0.4, 0.2]) {
            assert_relative_eq!(*x, y, epsilon = 1e-15);
        }
    }

    #[test]
    fn rational_table_sums_to_one() {
        let p = fan(0.5, 0.5, -0.4, -0.4, 0.3);
        let tr = truncation(&p, 6, 1e-6).unwrap();
        let t = stationary_table_in::<BigRational>(&p, 6, tr.dim);
        let s = t.iter().fold(BigRational::zero(), |a, x| a + x);
        assert_eq!(s, ratio(1, 1));
    }

    #[test]
    fn product_measure_limit() {
        // a = b → 1 with c = d = q = 0 approaches i.i.d. Bernoulli(1/2).
        let mut prev = f64::INFINITY;
        for eps in [0.2, 0.05, 0.01] {
            let p = fan(1.0 - eps, 1.0 - eps, 0.0, 0.0, 0.0);
            let t = stationary_table(&p, 4, NumericMode::LogFloat { tol: 1e-10 }).unwrap();
            let dev = t.value.iter().map(|x| (x - 1.0 / 16.0).abs()).fold(0.0, f64::max);
            assert!(dev < prev);
            prev = dev;
        }
        assert!(prev < 5e-3);
    }

    #[test]
    fn catalan_partition() {
        let p = fan(0.0, 0.0, 0.0, 0.0, 0.0);
        let lz = partition_log_z(&p, 1, NumericMode::float()).unwrap();
        assert_relative_eq!(lz.value, 2f64.ln(), epsilon = 1e-14);
        let lz = partition_log_z(&p, 2, NumericMode::ExactRational).unwrap();
        assert_relative_eq!(lz.value, 5f64.ln(), epsilon = 1e-14);
    }

    #[test]
    fn truncation_is_certified() {
        let p = fan(0.5, 0.5, -0.4, -0.4, 0.3);
        let tr = truncation(&p, 10, 1e-12).unwrap();
        assert!(tr.certified_error <= 1e-12);
        // Doubling the dimension moves log Z by less than the certificate.
        let a = log_partition_dim(&p, 10, tr.dim);
        let b = log_partition_dim(&p, 10, 2 * tr.dim);
        assert!(b - a <= tr.certified_error + 1e-14);
        let tr0 = truncation(&fan(0.0, 3.0, 0.0, 0.0, 0.0), 10, 1e-12).unwrap();
        assert_eq!((tr0.dim, tr0.certified_error), (11, 0.0));
    }

    #[test]
    fn height_marginal_examples() {
        let p = fan(0.0, 0.0, 0.0, 0.0, 0.0);
        let m = height_marginal_dist(&p, 2, &[2], 1e-12, DEFAULT_STATE_BUDGET).unwrap();
        for (k, want) in [(0, 0.2), (1, 0.6), (2, 0.2)] {
            assert_relative_eq!(m.prob(&[k]), want, epsilon = 1e-14);
        }
        let r = BoundaryRates::new(0.6, 0.7, 0.2, 0.1, 0.3).unwrap();
        let p = r.to_fan().unwrap();
        let m = height_marginal_dist(&p, 1, &[1], 1e-12, DEFAULT_STATE_BUDGET).unwrap();
        let one = stationary_prob(&p, &[true], NumericMode::float()).unwrap().value;
        assert_relative_eq!(m.prob(&[1]), one, epsilon = 1e-13);
        assert_relative_eq!(m.prob(&[0]), 1.0 - one, epsilon = 1e-13);
    }

    #[test]
    fn height_marginal_matches_table_with_three_pins() {
        let p = fan(0.8, 0.4, -0.3, -0.2, 0.5);
        let n = 7;
        let pins = [2, 4, 7];
        let m = height_marginal_dist(&p, n, &pins, 1e-12, DEFAULT_STATE_BUDGET).unwrap();
        let table = stationary_table(&p, n, NumericMode::float()).unwrap().value;
        let mut want = BTreeMap::<Vec<usize>, f64>::new();
        for (idx, pr) in table.iter().enumerate() {
            let tau = config_from_index(idx, n);
            let key: Vec<usize> = pins.iter().map(|&s| tau[..s].iter().filter(|&&t| t).count()).collect();
            *want.entry(key).or_default() += pr;
        }
        assert_eq!(m.entries.len(), want.len());
        for (k, v) in want {
            assert_relative_eq!(m.prob(&k), v, epsilon = 1e-12);
        }
        assert_relative_eq!(m.total(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn height_marginal_density_envelope() {
        for (a, b) in [(0.5, 0.5), (2.0, 0.2), (0.2, 2.0)] {
            let p = fan(a, b, 0.0, 0.0, 0.0);
            let n = 100;
            let m = height_marginal_dist(&p, n, &[n], 1e-10, DEFAULT_STATE_BUDGET).unwrap();
            let mean: f64 = m.entries.iter().map(|(k, pr)| k[0] as f64 * pr).sum::<f64>() / n as f64;
            let (hi, lo) = p.effective_densities();
            assert!(mean >= lo - 0.05 && mean <= hi + 0.05, "{a} {b} {mean}");
        }
    }

    #[test]
    fn generator_oracle() {
        let r = BoundaryRates::new(0.6, 0.7, 0.2, 0.1, 0.3).unwrap();
        assert!(generator_stationarity_check(&r, 1, 1e-12).unwrap() <= 1e-12);
        assert!(generator_stationarity_check(&r, 6, 1e-12).unwrap() <= 1e-9);
        let t = BoundaryRates::tasep(1.0, 1.0).unwrap();
        assert!(generator_residual(&t, 3, &[0.125; 8]) > 0.01);
    }

    #[test]
    fn particle_hole_reversal_symmetry() {
        let p = BoundaryRates::new(0.7, 0.7, 0.3, 0.3, 0.4).unwrap().to_fan().unwrap();
        let n = 6;
        let tr = truncation(&p, n, 1e-8).unwrap();
        let t = stationary_table_in::<f64>(&p, n, tr.dim);
        for idx in 0..(1 << n) {
            let tau = config_from_index(idx, n);
            let mirror: Vec<bool> = tau.iter().rev().map(|&x| !x).collect();
            assert_relative_eq!(t[idx], t[config_index(&mirror)], max_relative = 1e-10);
        }
    }

    #[test]
    fn scan_limits() {
        let scan = asymptotic_log_z_scan(&fan(0.0, 0.0, 0.0, 0.0, 0.0), &[100, 400], 1e-10).unwrap();
        assert!(scan[1].deviation.abs() < scan[0].deviation.abs());
        // log Catalan(N+1) at N = 100 by the product formula.
        let n = 100u32;
        let log_cat: f64 = (2..=n + 1).map(|k| ((n + 1 + k) as f64 / k as f64).ln()).sum();
        assert_relative_eq!(scan[0].deviation, log_cat / 100.0 + 0.25f64.ln(), epsilon = 1e-12);
    }
}
