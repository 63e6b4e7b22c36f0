//! The two-layer measure: ordered pairs of Bernoulli paths weighted by
//! boundary factors and local step weights depending on the gap
//! `λ1 − λ2`.
//!
//! Everything here goes through the gap chain built from
//! [`step_weight`](crate::qkernel::step_weight), independently of the
//! matrices in [`mpa`](crate::mpa), so the two can be compared.

use num_rational::BigRational;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{AsepError, Result};
use crate::mpa::{renormalize, truncation, Certified, FanValues};
use crate::params::FanParams;
use crate::qkernel::{log_sum_exp, qpochhammer, qpochhammer_prefix, step_weight, NumericMode};
use crate::scalar::Scalar;
use crate::stats::{wilson_interval, Z95};

/// Ordered pair of Bernoulli paths on `0..=N` with `λ1(0) = 0`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TwoLayerConfig {
    pub lambda1: Vec<i64>,
    pub lambda2: Vec<i64>,
}

impl TwoLayerConfig {
    pub fn n(&self) -> usize {
        self.lambda1.len().saturating_sub(1)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(AsepError::InvalidConfig(m.to_string()));
        if self.lambda1.is_empty() || self.lambda1.len() != self.lambda2.len() {
            return bad("layers must have equal, positive length");
        }
        if self.lambda1[0] != 0 {
            return bad("lambda1(0) must be 0");
        }
        if self.lambda1.iter().zip(&self.lambda2).any(|(x, y)| x < y) {
            return bad("lambda1 must dominate lambda2");
        }
        for l in [&self.lambda1, &self.lambda2] {
            if l.windows(2).any(|w| !(0..=1).contains(&(w[1] - w[0]))) {
                return bad("increments must be 0 or 1");
            }
        }
        Ok(())
    }

    pub fn gaps(&self) -> Vec<usize> {
        self.lambda1.iter().zip(&self.lambda2).map(|(x, y)| (x - y) as usize).collect()
    }

    /// `(u_j, v_j)` for `j = 1..=N`.
    pub fn steps(&self) -> Vec<(bool, bool)> {
        (1..self.lambda1.len())
            .map(|j| {
                (self.lambda1[j] > self.lambda1[j - 1], self.lambda2[j] > self.lambda2[j - 1])
            })
            .collect()
    }

    pub fn from_gap_path(path: &GapPath) -> Result<Self> {
        path.validate()?;
        let n = path.g.len() - 1;
        let mut l1 = vec![0i64; n + 1];
        let mut l2 = vec![-(path.g[0] as i64); n + 1];
        for j in 1..=n {
            let (u, v) = match path.g[j] as i64 - path.g[j - 1] as i64 {
                1 => (1, 0),
                -1 => (0, 1),
                _ if path.flat_colors[j - 1] => (1, 1),
                _ => (0, 0),
            };
            l1[j] = l1[j - 1] + u;
            l2[j] = l2[j - 1] + v;
        }
        Ok(Self { lambda1: l1, lambda2: l2 })
    }

    pub fn to_gap_path(&self) -> Result<GapPath> {
        self.validate()?;
        let g = self.gaps();
        let flat_colors = self.steps().iter().map(|&(u, v)| u && v).collect();
        Ok(GapPath { g, flat_colors })
    }

    /// `h_N(θ) = λ1(θN)/N`, linearly interpolated.
    pub fn height_at(&self, theta: f64) -> f64 {
        let n = self.n();
        let x = theta * n as f64;
        let k = (x.floor() as usize).min(n);
        let frac = x - k as f64;
        let base = self.lambda1[k] as f64;
        let next = if k < n { self.lambda1[k + 1] as f64 } else { base };
        (base + frac * (next - base)) / n as f64
    }
}

/// Gap path `g = λ1 − λ2` plus the colors of flat steps
/// (`true` for `(1,1)`, `false` for `(0,0)`).
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GapPath {
    pub g: Vec<usize>,
    /// One entry per step; must be `false` on non-flat steps.
    pub flat_colors: Vec<bool>,
}

impl GapPath {
    pub fn validate(&self) -> Result<()> {
        if self.g.is_empty() || self.flat_colors.len() + 1 != self.g.len() {
            return Err(AsepError::InvalidConfig("gap path length mismatch".into()));
        }
        for j in 1..self.g.len() {
            let dg = self.g[j] as i64 - self.g[j - 1] as i64;
            if dg.abs() > 1 || (dg != 0 && self.flat_colors[j - 1]) {
                return Err(AsepError::InvalidConfig(format!("bad gap step at {j}")));
            }
        }
        Ok(())
    }
}

/// Windows `u_j < h_N(θ_j) < v_j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowSpec {
    pub thetas: Vec<f64>,
    pub lows: Vec<f64>,
    pub highs: Vec<f64>,
}

impl WindowSpec {
    pub fn new(thetas: Vec<f64>, lows: Vec<f64>, highs: Vec<f64>) -> Result<Self> {
        let w = Self { thetas, lows, highs };
        w.validate()?;
        Ok(w)
    }

    /// The single window `u < h_N(1) < v`.
    pub fn endpoint(u: f64, v: f64) -> Result<Self> {
        Self::new(vec![1.0], vec![u], vec![v])
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.thetas.len();
        let bad = |m: String| Err(AsepError::Domain(m));
        if k == 0 || self.lows.len() != k || self.highs.len() != k {
            return bad("thetas, lows and highs must have the same positive length".into());
        }
        if self.thetas[0] <= 0.0 || self.thetas.windows(2).any(|w| w[0] >= w[1]) || self.thetas[k - 1] != 1.0 {
            return bad("thetas must increase from above 0 to exactly 1".into());
        }
        for j in 0..k {
            if !(0.0 < self.lows[j] && self.lows[j] < self.highs[j]) {
                return bad(format!("window {j} needs 0 < u < v"));
            }
        }
        let vlast = self.highs[k - 1];
        for j in 0..k - 1 {
            if !(vlast - self.lows[j] < 1.0 - self.thetas[j]) {
                return bad(format!("window {j} violates v_last - u_j < 1 - theta_j"));
            }
        }
        Ok(())
    }

    pub fn contains(&self, cfg: &TwoLayerConfig) -> bool {
        self.thetas.iter().zip(self.lows.iter().zip(&self.highs)).all(|(&t, (&u, &v))| {
            let h = cfg.height_at(t);
            u < h && h < v
        })
    }
}

/// Two-layer weight of a configuration.
pub fn weight<S: Scalar>(cfg: &TwoLayerConfig, p: &FanParams) -> Result<S> {
    p.require_fan()?;
    cfg.validate()?;
    let f = FanValues::<S>::from_params(p);
    let gaps = cfg.gaps();
    let g0 = gaps[0];
    let gn = *gaps.last().unwrap();
    let cd = f.c.clone() * f.d.clone();
    let mut w = f.a.pow_u(g0) * f.b.pow_u(gn) * qpochhammer(&cd, &f.q, gn) / qpochhammer(&f.q, &f.q, gn);
    for (j, (u, v)) in cfg.steps().into_iter().enumerate() {
        w = w * step_weight(gaps[j + 1], u, v, &f.q, &f.c, &f.d);
    }
    Ok(w)
}

/// Gap-chain transfer weights, conjugated by `diag(t^g)` as in
/// [`mpa`](crate::mpa) so that floating-point ranges stay moderate.
#[derive(Debug, Clone)]
pub(crate) struct GapKernel<S> {
    /// `g → g+1`: `W(g+1 | 1,0)·t`.
    pub up: Vec<S>,
    /// `g → g` with `(0,0)`.
    pub f00: Vec<S>,
    /// `g → g` with `(1,1)`.
    pub f11: Vec<S>,
    /// `g+1 → g`: `W(g | 0,1)/t`.
    pub down: Vec<S>,
    pub start: Vec<S>,
    pub end: Vec<S>,
}

impl<S: Scalar> GapKernel<S> {
    fn build(p: &FanParams, dim: usize, t: S, start_base: S, end_base: S) -> Self {
        let f = FanValues::<S>::from_params(p);
        let cd = f.c.clone() * f.d.clone();
        let cd_poch = qpochhammer_prefix(&cd, &f.q, dim);
        let q_poch = qpochhammer_prefix(&f.q, &f.q, dim);
        let mut k = GapKernel {
            up: Vec::with_capacity(dim),
            f00: Vec::with_capacity(dim),
            f11: Vec::with_capacity(dim),
            down: Vec::with_capacity(dim),
            start: Vec::with_capacity(dim),
            end: Vec::with_capacity(dim),
        };
        for g in 0..dim {
            k.up.push(step_weight(g + 1, true, false, &f.q, &f.c, &f.d) * t.clone());
            k.f00.push(step_weight(g, false, false, &f.q, &f.c, &f.d));
            k.f11.push(step_weight(g, true, true, &f.q, &f.c, &f.d));
            k.down.push(step_weight(g, false, true, &f.q, &f.c, &f.d) / t.clone());
            k.start.push(start_base.pow_u(g));
            k.end.push(end_base.pow_u(g) * cd_poch[g].clone() / q_poch[g].clone());
        }
        k
    }

    pub fn raw(p: &FanParams, dim: usize) -> Self {
        let f = FanValues::<S>::from_params(p);
        Self::build(p, dim, S::one(), f.a, f.b)
    }

    pub fn dim(&self) -> usize {
        self.up.len()
    }

    /// One step of the gap chain, summing over both layer moves.
    pub fn step(&self, x: &[S], out: &mut [S]) {
        let m = self.dim();
        for g in 0..m {
            let mut acc = x[g].clone() * (self.f00[g].clone() + self.f11[g].clone());
            if g > 0 {
                acc = acc + x[g - 1].clone() * self.up[g - 1].clone();
            }
            if g + 1 < m {
                acc = acc + x[g + 1].clone() * self.down[g].clone();
            }
            out[g] = acc;
        }
    }

    /// One step with the first layer's increment fixed to `u`.
    pub fn step_first(&self, x: &[S], u: bool, out: &mut [S]) {
        let m = self.dim();
        for g in 0..m {
            out[g] = if u {
                let mut acc = x[g].clone() * self.f11[g].clone();
                if g > 0 {
                    acc = acc + x[g - 1].clone() * self.up[g - 1].clone();
                }
                acc
            } else {
                let mut acc = x[g].clone() * self.f00[g].clone();
                if g + 1 < m {
                    acc = acc + x[g + 1].clone() * self.down[g].clone();
                }
                acc
            };
        }
    }

    pub fn dot_end(&self, x: &[S]) -> S {
        x.iter().zip(&self.end).fold(S::zero(), |acc, (a, b)| acc + a.clone() * b.clone())
    }
}

impl GapKernel<f64> {
    pub fn balanced(p: &FanParams, dim: usize) -> Self {
        if p.a > 0.0 && p.b > 0.0 {
            let s = (p.a * p.b).sqrt();
            Self::build(p, dim, (p.b / p.a).sqrt(), s, s)
        } else {
            Self::build(p, dim, 1.0, p.a, p.b)
        }
    }
}

/// `Z_N` summed over gap paths with gaps below `dim`, in any backend (no
/// rescaling).
pub fn partition_z_in<S: Scalar>(p: &FanParams, n: usize, dim: usize) -> S {
    let k = GapKernel::<S>::raw(p, dim);
    let mut x = k.start.clone();
    let mut y = x.clone();
    for _ in 0..n {
        k.step(&x, &mut y);
        std::mem::swap(&mut x, &mut y);
    }
    k.dot_end(&x)
}

/// `log Z_N` through the gap transfer with the certified truncation.
pub fn log_partition_z(p: &FanParams, n: usize, mode: NumericMode) -> Result<Certified<f64>> {
    mode.validate()?;
    let tr = truncation(p, n, mode.tol())?;
    let value = match mode {
        NumericMode::ExactRational => partition_z_in::<BigRational>(p, n, tr.dim).ln_positive(),
        NumericMode::LogFloat { .. } => {
            let k = GapKernel::balanced(p, tr.dim);
            let mut x = k.start.clone();
            let mut y = vec![0.0; tr.dim];
            let mut ls = renormalize(&mut x);
            for _ in 0..n {
                k.step(&x, &mut y);
                std::mem::swap(&mut x, &mut y);
                ls += renormalize(&mut x);
            }
            ls + k.dot_end(&x).ln()
        }
    };
    Ok(Certified { value, certified_error: tr.certified_error, dim: tr.dim })
}

pub const DEFAULT_ENUM_BUDGET: u128 = 20_000_000;

/// All configurations of positive weight with gaps below `dim`.
pub fn enumerate<S: Scalar>(
    p: &FanParams,
    n: usize,
    dim: usize,
    budget: u128,
) -> Result<Vec<(TwoLayerConfig, S)>> {
    p.require_fan()?;
    let starts: usize = if p.a == 0.0 { 1 } else { dim };
    let needed = starts as u128 * 4u128.pow(n as u32);
    if needed > budget {
        return Err(AsepError::Resource { needed, budget });
    }
    let mut out = Vec::new();
    let mut g = vec![0usize; n + 1];
    let mut colors = vec![false; n];
    fn rec<S: Scalar>(
        p: &FanParams,
        j: usize,
        dim: usize,
        g: &mut Vec<usize>,
        colors: &mut Vec<bool>,
        out: &mut Vec<(TwoLayerConfig, S)>,
    ) -> Result<()> {
        let n = colors.len();
        if j == n {
            if p.b == 0.0 && g[n] > 0 {
                return Ok(());
            }
            let cfg = TwoLayerConfig::from_gap_path(&GapPath { g: g.clone(), flat_colors: colors.clone() })?;
            let w: S = weight(&cfg, p)?;
            if w > S::zero() {
                out.push((cfg, w));
            }
            return Ok(());
        }
        let cur = g[j];
        let moves: [(i64, bool); 4] = [(-1, false), (0, false), (0, true), (1, false)];
        for (dg, color) in moves {
            let next = cur as i64 + dg;
            if next < 0 || next as usize >= dim {
                continue;
            }
            g[j + 1] = next as usize;
            colors[j] = color;
            rec(p, j + 1, dim, g, colors, out)?;
        }
        colors[j] = false;
        Ok(())
    }
    for g0 in 0..starts {
        g[0] = g0;
        rec(p, 0, dim, &mut g, &mut colors, &mut out)?;
    }
    Ok(out)
}

/// Law of the first layer's increments (index with the first increment as
/// the most significant bit), summing out the second layer through the gap
/// chain.
pub fn marginal_first_layer_in<S: Scalar>(p: &FanParams, n: usize, dim: usize) -> Vec<S> {
    let k = GapKernel::<S>::raw(p, dim);
    let mut out = vec![S::zero(); 1 << n];
    let mut stack = vec![vec![S::zero(); dim]; n + 1];
    stack[0] = k.start.clone();
    fn rec<S: Scalar>(k: &GapKernel<S>, depth: usize, prefix: usize, stack: &mut Vec<Vec<S>>, out: &mut [S]) {
        let n = stack.len() - 1;
        if depth == n {
            out[prefix] = k.dot_end(&stack[n]);
            return;
        }
        for u in [false, true] {
            let (lo, hi) = stack.split_at_mut(depth + 1);
            k.step_first(&lo[depth], u, &mut hi[0]);
            rec(k, depth + 1, (prefix << 1) | u as usize, stack, out);
        }
    }
    rec(&k, 0, 0, &mut stack, &mut out);
    let z = out.iter().fold(S::zero(), |acc, x| acc + x.clone());
    out.into_iter().map(|x| x / z.clone()).collect()
}

pub const MAX_MARGINAL_N: usize = 24;

pub fn marginal_first_layer(p: &FanParams, n: usize, mode: NumericMode) -> Result<Certified<Vec<f64>>> {
    mode.validate()?;
    if n > MAX_MARGINAL_N {
        return Err(AsepError::Resource { needed: 1u128 << n, budget: 1u128 << MAX_MARGINAL_N });
    }
    let tr = truncation(p, n, mode.tol())?;
    let value = match mode {
        NumericMode::ExactRational => marginal_first_layer_in::<BigRational>(p, n, tr.dim)
            .iter()
            .map(|x| x.to_f64_lossy())
            .collect(),
        NumericMode::LogFloat { .. } => {
            // The balanced kernel differs from the raw one by a similarity,
            // so the normalized marginal is unchanged.
            let k = GapKernel::balanced(p, tr.dim);
            let mut out = vec![0.0; 1 << n];
            let mut stack = vec![vec![0.0; tr.dim]; n + 1];
            stack[0] = k.start.clone();
            fn rec(k: &GapKernel<f64>, depth: usize, prefix: usize, stack: &mut Vec<Vec<f64>>, out: &mut [f64]) {
                let n = stack.len() - 1;
                if depth == n {
                    out[prefix] = k.dot_end(&stack[n]);
                    return;
                }
                for u in [false, true] {
                    let (lo, hi) = stack.split_at_mut(depth + 1);
                    k.step_first(&lo[depth], u, &mut hi[0]);
                    rec(k, depth + 1, (prefix << 1) | u as usize, stack, out);
                }
            }
            rec(&k, 0, 0, &mut stack, &mut out);
            let z: f64 = out.iter().sum();
            out.iter().map(|x| x / z).collect()
        }
    };
    Ok(Certified { value, certified_error: tr.certified_error, dim: tr.dim })
}

/// Exact sampler from the two-layer measure by forward filtering and
/// backward sampling on the gap chain.
#[derive(Debug, Clone)]
pub struct ExactSampler {
    params: FanParams,
    n: usize,
    kernel: GapKernel<f64>,
    /// `alphas[j][g]`: renormalized weight of prefixes ending at gap `g`.
    alphas: Vec<Vec<f64>>,
    pub certified_error: f64,
}

impl ExactSampler {
    pub fn new(p: &FanParams, n: usize, tol: f64) -> Result<Self> {
        let tr = truncation(p, n, tol)?;
        let kernel = GapKernel::balanced(p, tr.dim);
        let mut alphas = Vec::with_capacity(n + 1);
        let mut x = kernel.start.clone();
        renormalize(&mut x);
        let mut y = vec![0.0; tr.dim];
        for _ in 0..n {
            kernel.step(&x, &mut y);
            alphas.push(std::mem::replace(&mut x, y.clone()));
            renormalize(&mut x);
        }
        alphas.push(x);
        Ok(Self { params: *p, n, kernel, alphas, certified_error: tr.certified_error })
    }

    pub fn params(&self) -> &FanParams {
        &self.params
    }

    /// Gap truncation used by the sampler.
    pub fn dim(&self) -> usize {
        self.kernel.dim()
    }

    pub fn sample_gaps<R: Rng + ?Sized>(&self, rng: &mut R) -> GapPath {
        let k = &self.kernel;
        let dim = k.dim();
        let n = self.n;
        let mut g = vec![0usize; n + 1];
        let mut colors = vec![false; n];
        let terminal: Vec<f64> = (0..dim).map(|i| self.alphas[n][i] * k.end[i]).collect();
        g[n] = pick(&terminal, rng);
        for j in (1..=n).rev() {
            let cur = g[j];
            let a = &self.alphas[j - 1];
            let from_below = if cur > 0 { a[cur - 1] * k.up[cur - 1] } else { 0.0 };
            let flat = a[cur] * (k.f00[cur] + k.f11[cur]);
            let from_above = if cur + 1 < dim { a[cur + 1] * k.down[cur] } else { 0.0 };
            let choice = pick(&[from_below, flat, from_above], rng);
            g[j - 1] = match choice {
                0 => cur - 1,
                1 => cur,
                _ => cur + 1,
            };
            if choice == 1 {
                let p11 = k.f11[cur] / (k.f00[cur] + k.f11[cur]);
                colors[j - 1] = rng.random::<f64>() < p11;
            }
        }
        GapPath { g, flat_colors: colors }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> TwoLayerConfig {
        TwoLayerConfig::from_gap_path(&self.sample_gaps(rng)).expect("sampled gap paths are valid")
    }
}

fn pick<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    let mut last = 0;
    for (i, &w) in weights.iter().enumerate() {
        if w > 0.0 {
            if u < w {
                return i;
            }
            u -= w;
            last = i;
        }
    }
    last
}

/// One exact sample; build an [`ExactSampler`] to draw many.
pub fn exact_sample<R: Rng + ?Sized>(p: &FanParams, n: usize, tol: f64, rng: &mut R) -> Result<TwoLayerConfig> {
    Ok(ExactSampler::new(p, n, tol)?.sample(rng))
}

/// `weight(cfg; q,a,b,c,d) / weight(cfg; 0,a,b,0,0)`: the product of the
/// step weights times the terminal q-Pochhammer ratio.
pub fn boltzmann_factor(cfg: &TwoLayerConfig, p: &FanParams) -> Result<f64> {
    p.require_fan()?;
    cfg.validate()?;
    let gaps = cfg.gaps();
    let gn = *gaps.last().unwrap();
    let cd = p.c * p.d;
    let mut w = qpochhammer(&cd, &p.q, gn) / qpochhammer(&p.q, &p.q, gn);
    for (j, (u, v)) in cfg.steps().into_iter().enumerate() {
        w *= step_weight(gaps[j + 1], u, v, &p.q, &p.c, &p.d);
    }
    Ok(w)
}

enum Check {
    /// `u < h/N < v` on the height at a site.
    Point { site: usize, u: f64, v: f64 },
    /// `u < (h + frac·inc)/N < v` during the step leaving `site`.
    Mid { site: usize, frac: f64, u: f64, v: f64 },
}

fn window_checks(w: &WindowSpec, n: usize) -> Vec<Check> {
    w.thetas
        .iter()
        .zip(w.lows.iter().zip(&w.highs))
        .map(|(&t, (&u, &v))| {
            let x = t * n as f64;
            let site = x.floor() as usize;
            let frac = x - site as f64;
            if frac.abs() < 1e-12 || site >= n {
                Check::Point { site: site.min(n), u, v }
            } else if (1.0 - frac).abs() < 1e-12 {
                Check::Point { site: site + 1, u, v }
            } else {
                Check::Mid { site, frac, u, v }
            }
        })
        .collect()
}

/// `log Σ_{λ: window holds} wt(λ)` by dynamic programming over
/// (first-layer height, gap).
pub fn log_window_sum(p: &FanParams, w: &WindowSpec, n: usize, tol: f64) -> Result<f64> {
    w.validate()?;
    let tr = truncation(p, n, tol)?;
    let dim = tr.dim;
    let k = GapKernel::balanced(p, dim);
    let checks = window_checks(w, n);
    let nf = n as f64;
    let inside = |h: f64, u: f64, v: f64| u < h / nf && h / nf < v;
    let mut cur = vec![0.0; (n + 1) * dim];
    cur[..dim].copy_from_slice(&k.start);
    let mut log_scale = renormalize(&mut cur);
    let mut next = vec![0.0; cur.len()];
    let mut buf = vec![0.0; dim];
    let point_ok = |site: usize, h: usize| {
        checks.iter().all(|c| match *c {
            Check::Point { site: s, u, v } if s == site => inside(h as f64, u, v),
            _ => true,
        })
    };
    let mid_ok = |site: usize, h: usize, inc: bool| {
        checks.iter().all(|c| match *c {
            Check::Mid { site: s, frac, u, v } if s == site => inside(h as f64 + frac * inc as u8 as f64, u, v),
            _ => true,
        })
    };
    for h in 0..=n {
        if !point_ok(0, h) {
            cur[h * dim..(h + 1) * dim].iter_mut().for_each(|x| *x = 0.0);
        }
    }
    for j in 0..n {
        next.iter_mut().for_each(|x| *x = 0.0);
        for h in 0..=j {
            let base = h * dim;
            if cur[base..base + dim].iter().all(|&x| x == 0.0) {
                continue;
            }
            for inc in [false, true] {
                let h2 = h + inc as usize;
                if !mid_ok(j, h, inc) || !point_ok(j + 1, h2) {
                    continue;
                }
                k.step_first(&cur[base..base + dim], inc, &mut buf);
                let dst = h2 * dim;
                for g in 0..dim {
                    next[dst + g] += buf[g];
                }
            }
        }
        std::mem::swap(&mut cur, &mut next);
        let s = renormalize(&mut cur);
        if s == f64::NEG_INFINITY {
            return Ok(f64::NEG_INFINITY);
        }
        log_scale += s;
    }
    let terms: Vec<f64> = (0..=n)
        .map(|h| k.dot_end(&cur[h * dim..(h + 1) * dim]))
        .filter(|&x| x > 0.0)
        .map(f64::ln)
        .collect();
    Ok(log_scale + log_sum_exp(&terms))
}

/// `(N, (1/N) log ratio)` of windowed partition sums of the general and
/// the TASEP-reference two-layer weights.
pub fn ratio_window_logasy(p: &FanParams, w: &WindowSpec, ns: &[usize], tol: f64) -> Result<Vec<(usize, f64)>> {
    let reference = p.tasep_companion();
    ns.iter()
        .map(|&n| {
            let num = log_window_sum(p, w, n, tol)?;
            let den = log_window_sum(&reference, w, n, tol)?;
            if !num.is_finite() || !den.is_finite() {
                return Err(AsepError::Domain(format!("window has zero weight at N = {n}")));
            }
            Ok((n, (num - den) / n as f64))
        })
        .collect()
}

/// Monte Carlo estimate of the separation event probability.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SeparationEstimate {
    pub n: usize,
    pub estimate: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// `exp(−N^{4/5})`.
    pub bound: f64,
    pub accepted: u64,
    pub proposals: u64,
    pub successes: u64,
}

/// Number of sites `j ∈ 0..=N` with gap at most `r`.
pub fn close_sites(cfg: &TwoLayerConfig, r: usize) -> usize {
    cfg.gaps().iter().filter(|&&g| g <= r).count()
}

pub const STARVATION_FLOOR: f64 = 1e-4;

/// `P(#{j: gap_j ≤ r} ≤ ⌈εN⌉ | window)` for the TASEP two-layer measure
/// with parameters `(a, b)`, from `accepted` window-conditioned samples.
#[allow(clippy::too_many_arguments)]
pub fn separation_probability<R: Rng + ?Sized>(
    a: f64,
    b: f64,
    r: usize,
    eps: f64,
    w: &WindowSpec,
    n: usize,
    accepted: u64,
    rng: &mut R,
) -> Result<SeparationEstimate> {
    let p = FanParams::tasep(a, b)?;
    w.validate()?;
    if !(0.0..=1.0).contains(&eps) {
        return Err(AsepError::Domain(format!("eps = {eps} not in [0, 1]")));
    }
    let sampler = ExactSampler::new(&p, n, 1e-12)?;
    let allowed = (eps * n as f64).ceil() as usize;
    let (mut acc, mut prop, mut succ) = (0u64, 0u64, 0u64);
    while acc < accepted {
        let cfg = sampler.sample(rng);
        prop += 1;
        if w.contains(&cfg) {
            acc += 1;
            if close_sites(&cfg, r) <= allowed {
                succ += 1;
            }
        }
        if prop >= 100_000 && (acc as f64) < STARVATION_FLOOR * prop as f64 {
            return Err(AsepError::RejectionStarvation { acceptance: acc as f64 / prop as f64 });
        }
    }
    let (lo, hi) = wilson_interval(succ, acc, Z95);
    Ok(SeparationEstimate {
        n,
        estimate: succ as f64 / acc as f64,
        ci_low: lo,
        ci_high: hi,
        bound: (-(n as f64).powf(0.8)).exp(),
        accepted: acc,
        proposals: prop,
        successes: succ,
    })
}
