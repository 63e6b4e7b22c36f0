//! Rate function of the height profile.

use serde::{Deserialize, Serialize};

use crate::error::{AsepError, Result};
use crate::qkernel::{current_j, entropy_h};

/// Piecewise-linear `f` on `[0, 1]` with `f(0) = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PiecewiseLinearProfile {
    xs: Vec<f64>,
    ys: Vec<f64>,
}

impl PiecewiseLinearProfile {
    pub fn new(xs: Vec<f64>, ys: Vec<f64>) -> Result<Self> {
        if xs.len() != ys.len() || xs.len() < 2 {
            return Err(AsepError::Domain("need at least two breakpoints with values".into()));
        }
        if xs[0] != 0.0 || *xs.last().unwrap() != 1.0 || ys[0] != 0.0 {
            return Err(AsepError::Domain("profile must start at (0, 0) and end at x = 1".into()));
        }
        if xs.windows(2).any(|w| !(w[0] < w[1])) || ys.iter().any(|y| !y.is_finite()) {
            return Err(AsepError::Domain("breakpoints must increase and values be finite".into()));
        }
        Ok(Self { xs, ys })
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.xs
    }

    pub fn values(&self) -> &[f64] {
        &self.ys
    }

    pub fn eval(&self, x: f64) -> f64 {
        let i = match self.xs.binary_search_by(|v| v.partial_cmp(&x).unwrap()) {
            Ok(i) => return self.ys[i],
            Err(i) => i.clamp(1, self.xs.len() - 1),
        };
        let (x0, x1, y0, y1) = (self.xs[i - 1], self.xs[i], self.ys[i - 1], self.ys[i]);
        y0 + (y1 - y0) * (x - x0) / (x1 - x0)
    }
}

const SLOPE_TOL: f64 = 1e-12;

impl PiecewiseLinearProfile {
    /// Straight line `f(x) = ρx`.
    pub fn line(rho: f64) -> Self {
        Self { xs: vec![0.0, 1.0], ys: vec![0.0, rho] }
    }

    /// Profile through `(i/k, values[i])`.
    pub fn from_grid(values: Vec<f64>) -> Result<Self> {
        let k = values.len().saturating_sub(1);
        if k == 0 {
            return Err(AsepError::Domain("need at least two grid values".into()));
        }
        let xs = (0..=k).map(|i| i as f64 / k as f64).collect();
        Self::new(xs, values)
    }

    pub fn slopes(&self) -> Vec<f64> {
        self.xs.windows(2).zip(self.ys.windows(2)).map(|(x, y)| (y[1] - y[0]) / (x[1] - x[0])).collect()
    }

    pub fn lengths(&self) -> Vec<f64> {
        self.xs.windows(2).map(|x| x[1] - x[0]).collect()
    }

    /// Every slope in `[0, 1]`.
    pub fn is_admissible(&self) -> bool {
        self.slopes().iter().all(|&s| (-SLOPE_TOL..=1.0 + SLOPE_TOL).contains(&s))
    }

    pub fn end_value(&self) -> f64 {
        *self.ys.last().unwrap()
    }

    /// `∫ H(f')`, or `+∞` if some slope leaves `[0, 1]`.
    pub fn entropy_integral(&self) -> f64 {
        self.slopes()
            .iter()
            .zip(self.lengths())
            .map(|(&s, l)| {
                let s = if s.abs() <= SLOPE_TOL { 0.0 } else if (s - 1.0).abs() <= SLOPE_TOL { 1.0 } else { s };
                let h = entropy_h(s);
                if h.is_infinite() { h } else { l * h }
            })
            .sum()
    }

    /// `min_x (f − g)(x)`, attained at a breakpoint of either profile.
    pub fn min_difference(&self, g: &PiecewiseLinearProfile) -> f64 {
        self.xs.iter().chain(&g.xs).map(|&x| self.eval(x) - g.eval(x)).fold(f64::INFINITY, f64::min)
    }

    /// Values at `i/k`, `i = 0..=k`.
    pub fn on_grid(&self, k: usize) -> Vec<f64> {
        (0..=k).map(|i| self.eval(i as f64 / k as f64)).collect()
    }
}

fn cross(o: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
}

/// Largest convex function below `f`: the lower hull of its vertices.
pub fn convex_envelope(f: &PiecewiseLinearProfile) -> PiecewiseLinearProfile {
    let mut hull: Vec<(f64, f64)> = Vec::with_capacity(f.xs.len());
    for p in f.xs.iter().copied().zip(f.ys.iter().copied()) {
        while hull.len() >= 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(p);
    }
    let (xs, ys) = hull.into_iter().unzip();
    PiecewiseLinearProfile { xs, ys }
}

fn check_ab(a: f64, b: f64) -> Result<()> {
    if !(a >= 0.0 && b >= 0.0 && a.is_finite() && b.is_finite()) {
        return Err(AsepError::Domain(format!("need a, b >= 0, got a = {a}, b = {b}")));
    }
    if a * b >= 1.0 {
        return Err(AsepError::OutsideFan { ab: a * b });
    }
    Ok(())
}

/// `x log y` with `0·log 0 = 0`.
fn xlogy(x: f64, y: f64) -> f64 {
    if x == 0.0 { 0.0 } else { x * y.ln() }
}

/// Closed-form rate `∫H(f') + ∫[f̃' log G + (1−f̃') log(1−G)] − log J(a, b)`.
pub fn rate_closed(f: &PiecewiseLinearProfile, a: f64, b: f64) -> Result<f64> {
    check_ab(a, b)?;
    if !f.is_admissible() {
        return Ok(f64::INFINITY);
    }
    let env = convex_envelope(f);
    let (lo, hi) = (a / (1.0 + a), 1.0 / (1.0 + b));
    let envelope_term: f64 = env
        .slopes()
        .iter()
        .zip(env.lengths())
        .map(|(&s, l)| {
            let s = s.clamp(0.0, 1.0);
            let g = s.max(lo).min(hi);
            l * (xlogy(s, g) + xlogy(1.0 - s, 1.0 - g))
        })
        .sum();
    Ok((f.entropy_integral() + envelope_term - current_j(a, b).ln()).max(0.0))
}

/// Pair form `∫(H(f')+H(g')) + log(ab)·min(f−g) − log(b)·(f(1)−g(1)) − log J`.
///
/// When `ab = 0` the middle term is `0` if `min(f − g) = 0` and `+∞`
/// otherwise; when `b = 0` the endpoint term is `0` if `g(1) = f(1)` and
/// `+∞` otherwise.
pub fn rate_pair(f: &PiecewiseLinearProfile, g: &PiecewiseLinearProfile, a: f64, b: f64) -> Result<f64> {
    check_ab(a, b)?;
    if !f.is_admissible() || !g.is_admissible() {
        return Ok(f64::INFINITY);
    }
    let m = f.min_difference(g).min(0.0);
    let min_term = if a * b > 0.0 {
        (a * b).ln() * m
    } else if m.abs() <= 1e-12 {
        0.0
    } else {
        return Ok(f64::INFINITY);
    };
    let diff = f.end_value() - g.end_value();
    let end_term = if b > 0.0 {
        -b.ln() * diff
    } else if diff.abs() <= 1e-12 {
        0.0
    } else {
        return Ok(f64::INFINITY);
    };
    Ok(f.entropy_integral() + g.entropy_integral() + min_term + end_term - current_j(a, b).ln())
}

/// Minkowski sum of two discretely convex sequences, truncated to `len`.
fn convex_convolve(v: &[f64], k: &[f64], len: usize) -> Vec<f64> {
    let len = len.min(v.len() + k.len() - 1);
    let mut out = Vec::with_capacity(len);
    if len == 0 {
        return out;
    }
    out.push(v[0] + k[0]);
    let (mut i, mut j) = (0, 0);
    while out.len() < len {
        let dv = if i + 1 < v.len() { v[i + 1] - v[i] } else { f64::INFINITY };
        let dk = if j + 1 < k.len() { k[j + 1] - k[j] } else { f64::INFINITY };
        let last = *out.last().unwrap();
        if dv <= dk {
            i += 1;
            out.push(last + dv);
        } else {
            j += 1;
            out.push(last + dk);
        }
    }
    out
}

/// `H(d/S)/L` for `d = 0..=S`: cost of one column of width `1/L` whose
/// increment is `d` lattice units of size `1/(L·S)`.
fn column_kernel(columns: usize, slope_steps: usize) -> Vec<f64> {
    (0..=slope_steps).map(|d| entropy_h(d as f64 / slope_steps as f64) / columns as f64).collect()
}

/// Minimizer of a unimodal function on `lo..=hi` by integer ternary search.
fn ternary_min(mut lo: usize, mut hi: usize, mut eval: impl FnMut(usize) -> f64) -> (usize, f64) {
    let mut memo = std::collections::HashMap::new();
    let mut f = |m: usize| *memo.entry(m).or_insert_with(|| eval(m));
    while hi - lo > 4 {
        let m1 = lo + (hi - lo) / 3;
        let m2 = hi - (hi - lo) / 3;
        if f(m1) <= f(m2) {
            hi = m2;
        } else {
            lo = m1;
        }
    }
    (lo..=hi).map(|m| (m, f(m))).fold((lo, f64::INFINITY), |acc, x| if x.1 < acc.1 { x } else { acc })
}

/// Variational approximation of the rate on a `K`-grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VariationalRate {
    pub value: f64,
    /// `|v_K − v_{K/2}|`, the empirical discretization gap.
    pub gap: f64,
    pub k: usize,
    /// Optimal `min(f − g)`.
    pub min_difference: f64,
}

/// Cost bound on `K³`, the work of one inner dynamic program.
pub const VARIATIONAL_BUDGET: u128 = 20_000_000_000;

/// `inf_g rate_pair(f, g)` with `g` on the uniform `K`-grid, slopes in
/// `{0, 1/K, …, 1}`, and `f` replaced by its grid interpolant.
pub fn rate_variational(f: &PiecewiseLinearProfile, a: f64, b: f64, k: usize) -> Result<VariationalRate> {
    check_ab(a, b)?;
    if k < 2 {
        return Err(AsepError::Domain("grid resolution must be at least 2".into()));
    }
    let needed = (k as u128).pow(3);
    if needed > VARIATIONAL_BUDGET {
        return Err(AsepError::Resource { needed, budget: VARIATIONAL_BUDGET });
    }
    if !f.is_admissible() {
        return Ok(VariationalRate { value: f64::INFINITY, gap: 0.0, k, min_difference: 0.0 });
    }
    let (value, m) = variational_on_grid(f, a, b, k);
    let (coarse, _) = variational_on_grid(f, a, b, k / 2);
    let gap = if value.is_finite() && coarse.is_finite() { (value - coarse).abs() } else { 0.0 };
    Ok(VariationalRate { value, gap, k, min_difference: m })
}

fn variational_on_grid(f: &PiecewiseLinearProfile, a: f64, b: f64, k: usize) -> (f64, f64) {
    let s = k;
    let unit = 1.0 / (k * s) as f64;
    let fv = f.on_grid(k);
    let kernel = column_kernel(k, s);
    let h_f: f64 = fv.windows(2).map(|w| entropy_h(((w[1] - w[0]) * k as f64).clamp(0.0, 1.0)) / k as f64).sum();
    let f_units: Vec<f64> = fv.iter().map(|v| v / unit).collect();
    let ab_positive = a * b > 0.0;
    let end_target = (f_units[k] + 0.5).floor() as usize;

    let eval = |big_m: usize| -> f64 {
        let mut v = vec![0.0];
        for fu in &f_units[1..] {
            let cap = (fu + big_m as f64 + 1e-9).floor();
            if cap < 0.0 {
                return f64::INFINITY;
            }
            v = convex_convolve(&v, &kernel, cap as usize + 1);
        }
        let tail = if b > 0.0 {
            let lb = b.ln();
            v.iter().enumerate().map(|(y, c)| c + lb * y as f64 * unit).fold(f64::INFINITY, f64::min)
        } else {
            v.get(end_target).copied().unwrap_or(f64::INFINITY)
        };
        let m = -(big_m as f64) * unit;
        let min_term = if ab_positive { (a * b).ln() * m } else { 0.0 };
        let end_term = if b > 0.0 { -b.ln() * fv[k] } else { 0.0 };
        h_f + tail + min_term + end_term - current_j(a, b).ln()
    };
    let (big_m, value) = if ab_positive { ternary_min(0, k * s, eval) } else { (0, eval(0)) };
    (value, -(big_m as f64) * unit)
}

/// Pinned values `f(θ_j) = x_j` with `0 < θ_1 < … < θ_{d+1} = 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PinnedSpec {
    pub thetas: Vec<f64>,
    pub xs: Vec<f64>,
}

impl PinnedSpec {
    pub fn new(thetas: Vec<f64>, xs: Vec<f64>) -> Result<Self> {
        if thetas.is_empty() || thetas.len() != xs.len() {
            return Err(AsepError::Domain("need matching, non-empty thetas and xs".into()));
        }
        if thetas[0] <= 0.0 || thetas.windows(2).any(|w| !(w[0] < w[1])) || *thetas.last().unwrap() != 1.0 {
            return Err(AsepError::Domain("need 0 < θ_1 < … < θ_{d+1} = 1".into()));
        }
        if xs.iter().any(|x| !x.is_finite()) {
            return Err(AsepError::Domain("pinned values must be finite".into()));
        }
        Ok(Self { thetas, xs })
    }

    fn increments(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        (0..self.thetas.len()).map(|j| {
            let (t0, x0) = if j == 0 { (0.0, 0.0) } else { (self.thetas[j - 1], self.xs[j - 1]) };
            (self.xs[j] - x0, self.thetas[j] - t0)
        })
    }

    /// `0 ≤ x_j − x_{j−1} ≤ θ_j − θ_{j−1}` for all `j`.
    pub fn in_cone(&self) -> bool {
        self.increments().all(|(dx, dt)| dx >= -SLOPE_TOL && dx <= dt + SLOPE_TOL)
    }

    /// Strict version of [`PinnedSpec::in_cone`].
    pub fn in_interior(&self) -> bool {
        self.increments().all(|(dx, dt)| dx > SLOPE_TOL && dx < dt - SLOPE_TOL)
    }

    /// Values of `f` at the pins.
    pub fn from_profile(f: &PiecewiseLinearProfile, thetas: Vec<f64>) -> Result<Self> {
        let xs = thetas.iter().map(|&t| f.eval(t)).collect();
        Self::new(thetas, xs)
    }
}

/// Lattice for [`finite_dim_rate`]: `columns` of width `1/L`, each with
/// increments in multiples of `1/(L·S)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FiniteDimGrid {
    pub columns: usize,
    pub slope_steps: usize,
}

impl Default for FiniteDimGrid {
    fn default() -> Self {
        Self { columns: 10, slope_steps: 30 }
    }
}

/// Cost bound on `L·(L·S)²·S`, the work of one pair dynamic program.
pub const FINITE_DIM_BUDGET: u128 = 2_000_000_000;

/// `inf { I(f) : f(θ_j) = x_j }` through the pair form, optimizing jointly
/// over lattice paths `f` and `g`. `+∞` outside the cone.
pub fn finite_dim_rate(spec: &PinnedSpec, a: f64, b: f64, grid: FiniteDimGrid) -> Result<f64> {
    check_ab(a, b)?;
    if !spec.in_cone() {
        return Ok(f64::INFINITY);
    }
    let (l, s) = (grid.columns, grid.slope_steps);
    if l == 0 || s == 0 {
        return Err(AsepError::Domain("grid needs at least one column and one slope step".into()));
    }
    let needed = (l as u128) * ((l * s) as u128).pow(2) * (s as u128 + 1);
    if needed > FINITE_DIM_BUDGET {
        return Err(AsepError::Resource { needed, budget: FINITE_DIM_BUDGET });
    }
    // Snap pins to columns and values to the lattice, staying in the cone.
    let mut pins: Vec<Option<usize>> = vec![None; l + 1];
    let (mut prev_c, mut prev_x) = (0usize, 0usize);
    for (&t, &x) in spec.thetas.iter().zip(&spec.xs) {
        let c = (t * l as f64).round() as usize;
        if c <= prev_c {
            return Err(AsepError::Domain(format!("{l} columns cannot separate the pins")));
        }
        let raw = (x * (l * s) as f64).round().max(0.0) as usize;
        let xu = raw.clamp(prev_x, prev_x + s * (c - prev_c));
        pins[c] = Some(xu);
        (prev_c, prev_x) = (c, xu);
    }
    let end_f = prev_x;
    let unit = 1.0 / (l * s) as f64;
    let kernel = column_kernel(l, s);
    let width = l * s + 1;
    let ab_positive = a * b > 0.0;

    let eval = |big_m: usize| -> f64 {
        let inf = f64::INFINITY;
        let mut v = vec![inf; width * width];
        v[0] = 0.0;
        let mut w = vec![inf; width * width];
        for (c, pin) in pins.iter().enumerate().skip(1) {
            let reach = (c * s).min(width - 1);
            let prev = ((c - 1) * s).min(width - 1);
            // f increments.
            for yf in 0..=reach {
                for yg in 0..=prev {
                    let mut best = inf;
                    for d in 0..=s.min(yf) {
                        if yf - d > prev {
                            continue;
                        }
                        let cand = v[(yf - d) * width + yg] + kernel[d];
                        if cand < best {
                            best = cand;
                        }
                    }
                    w[yf * width + yg] = best;
                }
            }
            // g increments, then constraints.
            for yf in 0..=reach {
                if pin.is_some_and(|p| p != yf) {
                    for yg in 0..=reach {
                        v[yf * width + yg] = inf;
                    }
                    continue;
                }
                for yg in 0..=reach {
                    if yg > yf + big_m {
                        v[yf * width + yg] = inf;
                        continue;
                    }
                    let mut best = inf;
                    for d in 0..=s.min(yg) {
                        if yg - d > prev {
                            continue;
                        }
                        let cand = w[yf * width + yg - d] + kernel[d];
                        if cand < best {
                            best = cand;
                        }
                    }
                    v[yf * width + yg] = best;
                }
            }
        }
        let row = &v[end_f * width..(end_f + 1) * width];
        let tail = if b > 0.0 {
            let lb = b.ln();
            row.iter()
                .enumerate()
                .map(|(yg, c)| c - lb * (end_f as f64 - yg as f64) * unit)
                .fold(inf, f64::min)
        } else {
            row[end_f]
        };
        let min_term = if ab_positive { -(a * b).ln() * big_m as f64 * unit } else { 0.0 };
        tail + min_term - current_j(a, b).ln()
    };
    let value = if ab_positive { ternary_min(0, l * s, eval).1 } else { eval(0) };
    Ok(value.max(0.0))
}

/// Moves `f` into the interior of the cone of `thetas`: a slope-1 ramp of
/// length `eps` is added at the start of each flat pinned interval and
/// removed at the start of each full-slope one; the shift persists to the
/// right. Profiles already interior are returned unchanged.
pub fn interior_perturbation(f: &PiecewiseLinearProfile, thetas: &[f64], eps: f64) -> Result<PiecewiseLinearProfile> {
    if !(eps > 0.0) {
        return Err(AsepError::Domain(format!("eps must be positive, got {eps}")));
    }
    if !f.is_admissible() {
        return Err(AsepError::Domain("profile must have slopes in [0, 1]".into()));
    }
    let spec = PinnedSpec::from_profile(f, thetas.to_vec())?;
    let mut ramps: Vec<(f64, f64)> = Vec::new();
    for (j, (dx, dt)) in spec.increments().enumerate() {
        let sign = if dx.abs() <= SLOPE_TOL {
            1.0
        } else if (dx - dt).abs() <= SLOPE_TOL {
            -1.0
        } else {
            continue;
        };
        if eps >= dt {
            return Err(AsepError::Domain(format!("eps = {eps} does not fit in a pinned interval of length {dt}")));
        }
        let start = if j == 0 { 0.0 } else { thetas[j - 1] };
        ramps.push((start, sign));
    }
    if ramps.is_empty() {
        return Ok(f.clone());
    }
    let mut xs: Vec<f64> = f.xs.clone();
    for &(t, _) in &ramps {
        xs.push(t);
        xs.push(t + eps);
    }
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    xs.dedup();
    let ys = xs
        .iter()
        .map(|&x| f.eval(x) + ramps.iter().map(|&(t, sign)| sign * (x - t).clamp(0.0, eps)).sum::<f64>())
        .collect();
    PiecewiseLinearProfile::new(xs, ys)
}
