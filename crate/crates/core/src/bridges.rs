//! Bernoulli random walk bridges: counting, uniform sampling, Gibbs
//! resampling of ordered pairs, monotone couplings, and exact checks of the
//! correlation inequalities they satisfy.
//!
//! Unbounded ceilings and floors are encoded with the sentinels
//! [`POS_INF`] and [`NEG_INF`].

use num_bigint::BigUint;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};
use rand::Rng;
use serde::Serialize;

use crate::error::{AsepError, Result};
use crate::stats::{wilson_interval, Z95};

pub const POS_INF: i64 = i64::MAX;
pub const NEG_INF: i64 = i64::MIN;

/// Path on `0..=N` with increments in `{0, 1}`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct BernoulliPath {
    pub values: Vec<i64>,
}

impl BernoulliPath {
    pub fn new(values: Vec<i64>) -> Result<Self> {
        if values.is_empty() || values.windows(2).any(|w| !(0..=1).contains(&(w[1] - w[0]))) {
            return Err(AsepError::InvalidConfig("increments must be 0 or 1".into()));
        }
        Ok(Self { values })
    }

    pub fn n(&self) -> usize {
        self.values.len() - 1
    }

    pub fn dominated_by(&self, other: &BernoulliPath) -> bool {
        self.values.iter().zip(&other.values).all(|(a, b)| a <= b)
    }
}

/// `Ω(N, x, y, f, g)`: Bernoulli paths from `x` to `y` with `g ≤ L ≤ f`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BridgeSpec {
    pub n: usize,
    pub x: i64,
    pub y: i64,
    pub ceiling: Option<Vec<i64>>,
    pub floor: Option<Vec<i64>>,
}

impl BridgeSpec {
    pub fn new(n: usize, x: i64, y: i64) -> Self {
        Self { n, x, y, ceiling: None, floor: None }
    }

    pub fn with_ceiling(mut self, f: Vec<i64>) -> Self {
        assert_eq!(f.len(), self.n + 1, "ceiling must cover 0..=N");
        self.ceiling = Some(f);
        self
    }

    pub fn with_floor(mut self, g: Vec<i64>) -> Self {
        assert_eq!(g.len(), self.n + 1, "floor must cover 0..=N");
        self.floor = Some(g);
        self
    }

    pub fn hi(&self, j: usize) -> i64 {
        self.ceiling.as_ref().map_or(POS_INF, |f| f[j])
    }

    pub fn lo(&self, j: usize) -> i64 {
        self.floor.as_ref().map_or(NEG_INF, |g| g[j])
    }

    pub fn is_unconstrained(&self) -> bool {
        (0..=self.n).all(|j| self.hi(j) == POS_INF && self.lo(j) == NEG_INF)
    }

    /// Whether `(j, v)` is inside the bounds and on some path from `x` to `y`.
    fn allowed(&self, j: usize, v: i64) -> bool {
        let from_start = v - self.x;
        let to_end = self.y - v;
        from_start >= 0
            && from_start <= j as i64
            && to_end >= 0
            && to_end <= (self.n - j) as i64
            && v <= self.hi(j)
            && v >= self.lo(j)
    }

    pub fn contains(&self, path: &BernoulliPath) -> bool {
        path.n() == self.n
            && path.values[0] == self.x
            && path.values[self.n] == self.y
            && path.values.iter().enumerate().all(|(j, &v)| v <= self.hi(j) && v >= self.lo(j))
    }
}

/// `suffix[j][v − x]`: number of completions from `(j, v)` to `(N, y)`.
fn suffix_counts(spec: &BridgeSpec) -> Vec<Vec<BigUint>> {
    let n = spec.n;
    let w = n + 2;
    let mut suf = vec![vec![BigUint::zero(); w]; n + 1];
    for (i, slot) in suf[n].iter_mut().enumerate() {
        if spec.x + i as i64 == spec.y && spec.allowed(n, spec.y) {
            *slot = BigUint::one();
        }
    }
    for j in (0..n).rev() {
        for i in 0..=j {
            let v = spec.x + i as i64;
            if !spec.allowed(j, v) {
                continue;
            }
            let c = &suf[j + 1][i] + &suf[j + 1][i + 1];
            suf[j][i] = c;
        }
    }
    suf
}

/// `|Ω|`; zero means the constrained set is empty.
pub fn count_paths(spec: &BridgeSpec) -> BigUint {
    suffix_counts(spec)[0][0].clone()
}

/// `a / (a + b)` for big counts, accurate to double precision.
fn share(a: &BigUint, b: &BigUint) -> f64 {
    let total = a + b;
    let shift = total.bits().saturating_sub(60);
    let a = (a >> shift).to_f64().unwrap_or(0.0);
    let t = (&total >> shift).to_f64().unwrap_or(1.0);
    a / t
}

/// Uniform sample from `Ω`.
pub fn sample_bridge<R: Rng + ?Sized>(spec: &BridgeSpec, rng: &mut R) -> Result<BernoulliPath> {
    if spec.y < spec.x || spec.y - spec.x > spec.n as i64 {
        return Err(AsepError::EmptySet(format!("no bridge from {} to {} in {} steps", spec.x, spec.y, spec.n)));
    }
    let mut values = Vec::with_capacity(spec.n + 1);
    let mut cur = spec.x;
    values.push(cur);
    if spec.is_unconstrained() {
        for j in 0..spec.n {
            let p_up = (spec.y - cur) as f64 / (spec.n - j) as f64;
            if rng.random::<f64>() < p_up {
                cur += 1;
            }
            values.push(cur);
        }
        return Ok(BernoulliPath { values });
    }
    let suf = suffix_counts(spec);
    if suf[0][0].is_zero() {
        return Err(AsepError::EmptySet("constrained bridge set is empty".into()));
    }
    for j in 0..spec.n {
        let i = (cur - spec.x) as usize;
        let p_up = share(&suf[j + 1][i + 1], &suf[j + 1][i]);
        if rng.random::<f64>() < p_up {
            cur += 1;
        }
        values.push(cur);
    }
    Ok(BernoulliPath { values })
}

/// Ordered pair `L1 ≥ L2`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct PathPair {
    pub upper: BernoulliPath,
    pub lower: BernoulliPath,
}

/// Boundary data of a non-intersecting pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct PairSpec {
    pub n: usize,
    pub x1: i64,
    pub x2: i64,
    pub y1: i64,
    pub y2: i64,
}

impl PairSpec {
    pub fn new(n: usize, x1: i64, x2: i64, y1: i64, y2: i64) -> Self {
        Self { n, x1, x2, y1, y2 }
    }

    fn upper(&self) -> BridgeSpec {
        BridgeSpec::new(self.n, self.x1, self.y1)
    }

    fn lower(&self) -> BridgeSpec {
        BridgeSpec::new(self.n, self.x2, self.y2)
    }
}

/// Joint suffix counts over `(L1(j), L2(j))`, indexed relative to the
/// starting points.
struct PairCounts {
    spec: PairSpec,
    suf: Vec<Vec<Vec<BigUint>>>,
}

impl PairCounts {
    fn new(spec: PairSpec, h1: Option<&[i64]>, h2: Option<&[i64]>) -> Self {
        let n = spec.n;
        let (up, lo) = (spec.upper(), spec.lower());
        let ok = |j: usize, i1: usize, i2: usize| {
            let v1 = spec.x1 + i1 as i64;
            let v2 = spec.x2 + i2 as i64;
            up.allowed(j, v1)
                && lo.allowed(j, v2)
                && v1 >= v2
                && h1.is_none_or(|h| v1 >= h[j])
                && h2.is_none_or(|h| v2 <= h[j])
        };
        let w = n + 2;
        let mut suf = vec![vec![vec![BigUint::zero(); w]; w]; n + 1];
        let (e1, e2) = (spec.y1 - spec.x1, spec.y2 - spec.x2);
        if e1 >= 0 && e2 >= 0 && e1 as usize <= n && e2 as usize <= n && ok(n, e1 as usize, e2 as usize) {
            suf[n][e1 as usize][e2 as usize] = BigUint::one();
        }
        for j in (0..n).rev() {
            for i1 in 0..=j {
                for i2 in 0..=j {
                    if !ok(j, i1, i2) {
                        continue;
                    }
                    let nx = &suf[j + 1];
                    let c = &nx[i1][i2] + &nx[i1 + 1][i2] + &nx[i1][i2 + 1] + &nx[i1 + 1][i2 + 1];
                    suf[j][i1][i2] = c;
                }
            }
        }
        Self { spec, suf }
    }

    fn total(&self) -> &BigUint {
        &self.suf[0][0][0]
    }
}

/// Number of ordered pairs in `Ω(N, (x1, x2), (y1, y2))`.
pub fn count_pairs(spec: &PairSpec) -> BigUint {
    PairCounts::new(*spec, None, None).total().clone()
}

/// Uniform sample of an ordered pair.
pub fn sample_pair<R: Rng + ?Sized>(spec: &PairSpec, rng: &mut R) -> Result<PathPair> {
    let pc = PairCounts::new(*spec, None, None);
    if pc.total().is_zero() {
        return Err(AsepError::EmptySet(format!("no ordered pair for {spec:?}")));
    }
    let (mut i1, mut i2) = (0usize, 0usize);
    let mut l1 = vec![spec.x1];
    let mut l2 = vec![spec.x2];
    for j in 0..spec.n {
        let nx = &pc.suf[j + 1];
        let opts = [(i1, i2), (i1 + 1, i2), (i1, i2 + 1), (i1 + 1, i2 + 1)];
        let total = &pc.suf[j][i1][i2];
        // Exact categorical draw: uniform integer below the total count.
        let target = uniform_below(total, rng);
        let mut acc = BigUint::zero();
        for (a, b) in opts {
            acc += &nx[a][b];
            if target < acc {
                i1 = a;
                i2 = b;
                break;
            }
        }
        l1.push(spec.x1 + i1 as i64);
        l2.push(spec.x2 + i2 as i64);
    }
    let _ = &pc.spec;
    Ok(PathPair { upper: BernoulliPath { values: l1 }, lower: BernoulliPath { values: l2 } })
}

/// Uniform integer in `[0, bound)` by rejection on random bits.
fn uniform_below<R: Rng + ?Sized>(bound: &BigUint, rng: &mut R) -> BigUint {
    let bits = bound.bits();
    let words = bits.div_ceil(32) as usize;
    loop {
        let mut digits: Vec<u32> = (0..words).map(|_| rng.random()).collect();
        let excess = (words as u64 * 32).saturating_sub(bits);
        if let Some(top) = digits.last_mut() {
            if excess > 0 {
                *top &= u32::MAX >> excess;
            }
        }
        let cand = BigUint::new(digits);
        if &cand < bound {
            return cand;
        }
    }
}

/// Which layer of a pair to resample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Layer {
    Upper,
    Lower,
}

/// The bridge law that the selected layer has on `[a, b]` given the rest.
fn refill_spec(pair: &PathPair, a: usize, b: usize, which: Layer) -> BridgeSpec {
    let (this, other) = match which {
        Layer::Upper => (&pair.upper, &pair.lower),
        Layer::Lower => (&pair.lower, &pair.upper),
    };
    let spec = BridgeSpec::new(b - a, this.values[a], this.values[b]);
    let bound = other.values[a..=b].to_vec();
    match which {
        Layer::Upper => spec.with_floor(bound),
        Layer::Lower => spec.with_ceiling(bound),
    }
}

/// Replaces the selected layer on `[a, b]` by a uniform constrained bridge
/// with the same endpoints, using the other layer as floor or ceiling.
pub fn gibbs_resample<R: Rng + ?Sized>(
    pair: &PathPair,
    a: usize,
    b: usize,
    which: Layer,
    rng: &mut R,
) -> Result<PathPair> {
    let n = pair.upper.n();
    if a > b || b > n {
        return Err(AsepError::Domain(format!("need 0 <= a <= b <= N, got a = {a}, b = {b}")));
    }
    if a == b {
        return Ok(pair.clone());
    }
    let piece = sample_bridge(&refill_spec(pair, a, b, which), rng)?;
    let mut out = pair.clone();
    let target = match which {
        Layer::Upper => &mut out.upper,
        Layer::Lower => &mut out.lower,
    };
    target.values[a..=b].copy_from_slice(&piece.values);
    Ok(out)
}

/// All ordered pairs, in lexicographic order.
pub fn enumerate_pairs(spec: &PairSpec) -> Vec<PathPair> {
    let ups = enumerate_paths(&spec.upper());
    let lows = enumerate_paths(&spec.lower());
    let mut out = Vec::new();
    for u in &ups {
        for l in &lows {
            if l.dominated_by(u) {
                out.push(PathPair { upper: u.clone(), lower: l.clone() });
            }
        }
    }
    out.sort();
    out
}

/// All paths in `Ω`, in lexicographic order.
pub fn enumerate_paths(spec: &BridgeSpec) -> Vec<BernoulliPath> {
    let mut out = Vec::new();
    let mut cur = vec![spec.x];
    fn rec(spec: &BridgeSpec, cur: &mut Vec<i64>, out: &mut Vec<BernoulliPath>) {
        let j = cur.len() - 1;
        if !spec.allowed(j, cur[j]) {
            return;
        }
        if j == spec.n {
            out.push(BernoulliPath { values: cur.clone() });
            return;
        }
        for inc in [0, 1] {
            cur.push(cur[j] + inc);
            rec(spec, cur, out);
            cur.pop();
        }
    }
    rec(spec, &mut cur, &mut out);
    out
}

/// Exact transition matrix of one Gibbs resampling move on the enumerated
/// pair space (row-stochastic, in rationals).
pub fn gibbs_kernel_exact(states: &[PathPair], a: usize, b: usize, which: Layer) -> Vec<Vec<BigRational>> {
    let m = states.len();
    let mut k = vec![vec![BigRational::zero(); m]; m];
    for (i, s) in states.iter().enumerate() {
        if a == b {
            k[i][i] = BigRational::one();
            continue;
        }
        let refills = enumerate_paths(&refill_spec(s, a, b, which));
        let p = BigRational::new(1.into(), (refills.len() as i64).into());
        for piece in refills {
            let mut t = s.clone();
            let target = match which {
                Layer::Upper => &mut t.upper,
                Layer::Lower => &mut t.lower,
            };
            target.values[a..=b].copy_from_slice(&piece.values);
            let j = states.binary_search(&t).expect("refill stays in the state space");
            k[i][j] += p.clone();
        }
    }
    k
}

/// Push-forward of a distribution through a kernel.
pub fn push_forward<S: Clone + Zero + std::ops::Mul<Output = S>>(dist: &[S], kernel: &[Vec<S>]) -> Vec<S> {
    let m = dist.len();
    let mut out = vec![S::zero(); m];
    for i in 0..m {
        for j in 0..m {
            out[j] = out[j].clone() + dist[i].clone() * kernel[i][j].clone();
        }
    }
    out
}

/// Whether every resampling move maps the uniform pair law to itself,
/// checked exactly for all windows `[a, b]` and both layers.
pub fn gibbs_preserves_uniform(spec: &PairSpec) -> Result<bool> {
    let states = enumerate_pairs(spec);
    if states.is_empty() {
        return Err(AsepError::EmptySet(format!("no ordered pair for {spec:?}")));
    }
    let u = BigRational::new(1.into(), (states.len() as i64).into());
    let uniform = vec![u; states.len()];
    for a in 0..=spec.n {
        for b in a..=spec.n {
            for which in [Layer::Upper, Layer::Lower] {
                let k = gibbs_kernel_exact(&states, a, b, which);
                if push_forward(&uniform, &k) != uniform {
                    return Ok(false);
                }
            }
        }
    }
    Ok(true)
}

/// Moves making up one sweep: windows `[j, j+2]` for `j = 0..N−2`, upper
/// layer then lower layer.
pub fn sweep_moves(n: usize) -> Vec<(usize, usize, Layer)> {
    let mut moves = Vec::new();
    for j in 0..n.saturating_sub(1) {
        moves.push((j, j + 2, Layer::Upper));
        moves.push((j, j + 2, Layer::Lower));
    }
    if n == 1 {
        moves.push((0, 1, Layer::Upper));
        moves.push((0, 1, Layer::Lower));
    }
    moves
}

pub fn gibbs_sweep<R: Rng + ?Sized>(pair: &PathPair, rng: &mut R) -> Result<PathPair> {
    let mut cur = pair.clone();
    for (a, b, which) in sweep_moves(pair.upper.n()) {
        cur = gibbs_resample(&cur, a, b, which, rng)?;
    }
    Ok(cur)
}

/// Exact law after `sweeps` sweeps from a deterministic start, and its total
/// variation distance to the uniform pair law.
pub fn gibbs_convergence(spec: &PairSpec, start: &PathPair, sweeps: usize) -> Result<f64> {
    let states = enumerate_pairs(spec);
    let idx = states
        .binary_search(start)
        .map_err(|_| AsepError::InvalidConfig("start is not in the pair space".into()))?;
    let kernels: Vec<Vec<Vec<f64>>> = sweep_moves(spec.n)
        .into_iter()
        .map(|(a, b, w)| {
            gibbs_kernel_exact(&states, a, b, w)
                .into_iter()
                .map(|row| row.iter().map(|x| x.to_f64().unwrap()).collect())
                .collect()
        })
        .collect();
    let mut dist = vec![0.0; states.len()];
    dist[idx] = 1.0;
    for _ in 0..sweeps {
        for k in &kernels {
            dist = push_forward(&dist, k);
        }
    }
    let u = 1.0 / states.len() as f64;
    Ok(0.5 * dist.iter().map(|p| (p - u).abs()).sum::<f64>())
}

/// Pointwise minimum (`up = false`) or maximum of `Ω`, which is itself in
/// `Ω`.
pub fn extreme_path(spec: &BridgeSpec, up: bool) -> Result<BernoulliPath> {
    let suf = suffix_counts(spec);
    if suf[0][0].is_zero() {
        return Err(AsepError::EmptySet("constrained bridge set is empty".into()));
    }
    let mut cur = spec.x;
    let mut values = vec![cur];
    for j in 0..spec.n {
        let i = (cur - spec.x) as usize;
        let go_up = if up { !suf[j + 1][i + 1].is_zero() } else { suf[j + 1][i].is_zero() };
        cur += go_up as i64;
        values.push(cur);
    }
    Ok(BernoulliPath { values })
}

/// Heat-bath update at interior site `j` driven by the uniform `u`: when
/// both values are allowed, the upper one is taken iff `u < 1/2`.
fn heat_bath(spec: &BridgeSpec, path: &mut [i64], j: usize, u: f64) {
    let (l, r) = (path[j - 1], path[j + 1]);
    if r - l != 1 {
        return;
    }
    let low_ok = l >= spec.lo(j) && l <= spec.hi(j);
    let high_ok = l + 1 >= spec.lo(j) && l < spec.hi(j);
    path[j] = match (low_ok, high_ok) {
        (true, true) => l + (u < 0.5) as i64,
        (true, false) => l,
        (false, true) => l + 1,
        (false, false) => path[j],
    };
}

fn scan(spec: &BridgeSpec, path: &mut [i64], us: &[f64]) {
    for j in 1..spec.n {
        heat_bath(spec, path, j, us[j - 1]);
    }
}

/// How [`monotone_couple`] produces its sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum CouplingMode {
    /// Systematic-scan Glauber dynamics for a fixed number of sweeps from
    /// the minimal paths.
    Sweeps(usize),
    /// Coupling from the past; each marginal is exactly uniform.
    FromThePast,
}

fn check_ordered(b: &BridgeSpec, t: &BridgeSpec) -> Result<()> {
    if b.n != t.n {
        return Err(AsepError::Unordered("specs have different lengths".into()));
    }
    if b.x > t.x || b.y > t.y {
        return Err(AsepError::Unordered("endpoints must satisfy x_b <= x_t, y_b <= y_t".into()));
    }
    for j in 0..=b.n {
        if b.lo(j) > t.lo(j) || b.hi(j) > t.hi(j) {
            return Err(AsepError::Unordered(format!("floors/ceilings not ordered at site {j}")));
        }
    }
    Ok(())
}

/// Coupled samples `L_b ≤ L_t` from two ordered bridge laws, using shared
/// randomness in monotone heat-bath dynamics.
pub fn monotone_couple<R: Rng + ?Sized>(
    spec_b: &BridgeSpec,
    spec_t: &BridgeSpec,
    mode: CouplingMode,
    rng: &mut R,
) -> Result<(BernoulliPath, BernoulliPath)> {
    check_ordered(spec_b, spec_t)?;
    let n = spec_b.n;
    let width = n.saturating_sub(1);
    let (mut lb, mut lt) = match mode {
        CouplingMode::Sweeps(sweeps) => {
            let mut lb = extreme_path(spec_b, false)?.values;
            let mut lt = extreme_path(spec_t, false)?.values;
            let mut us = vec![0.0; width];
            for _ in 0..sweeps {
                us.iter_mut().for_each(|u| *u = rng.random());
                scan(spec_b, &mut lb, &us);
                scan(spec_t, &mut lt, &us);
            }
            (lb, lt)
        }
        CouplingMode::FromThePast => {
            let (min_b, max_b) = (extreme_path(spec_b, false)?.values, extreme_path(spec_b, true)?.values);
            let (min_t, max_t) = (extreme_path(spec_t, false)?.values, extreme_path(spec_t, true)?.values);
            // randomness[s] drives the sweep at time −(s+1).
            let mut randomness: Vec<Vec<f64>> = Vec::new();
            let mut horizon = 1usize;
            loop {
                while randomness.len() < horizon {
                    randomness.push((0..width).map(|_| rng.random()).collect());
                }
                let run = |spec: &BridgeSpec, start: &[i64]| {
                    let mut p = start.to_vec();
                    for s in (0..horizon).rev() {
                        scan(spec, &mut p, &randomness[s]);
                    }
                    p
                };
                let (b0, b1) = (run(spec_b, &min_b), run(spec_b, &max_b));
                let (t0, t1) = (run(spec_t, &min_t), run(spec_t, &max_t));
                if b0 == b1 && t0 == t1 {
                    break (b0, t0);
                }
                horizon *= 2;
            }
        }
    };
    if lb.iter().zip(&lt).any(|(x, y)| x > y) {
        // Only reachable if the minimal paths were not ordered, which the
        // monotonicity of the constraints rules out.
        return Err(AsepError::Unordered("coupled paths crossed".into()));
    }
    Ok((BernoulliPath { values: std::mem::take(&mut lb) }, BernoulliPath { values: std::mem::take(&mut lt) }))
}

/// Both sides of a probability inequality `lhs ≥ rhs`, exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct InequalityReport {
    pub inequality: &'static str,
    pub instance: String,
    pub lhs: BigRational,
    pub rhs: BigRational,
}

impl InequalityReport {
    pub fn satisfied(&self) -> bool {
        self.lhs >= self.rhs
    }

    pub fn slack(&self) -> BigRational {
        &self.lhs - &self.rhs
    }

    pub fn record(&self) -> InequalityRecord {
        InequalityRecord {
            inequality: self.inequality.to_string(),
            instance: self.instance.clone(),
            lhs: self.lhs.to_f64().unwrap_or(f64::NAN),
            rhs: self.rhs.to_f64().unwrap_or(f64::NAN),
            lhs_exact: self.lhs.to_string(),
            rhs_exact: self.rhs.to_string(),
            satisfied: self.satisfied(),
        }
    }
}

/// Serializable form of an [`InequalityReport`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InequalityRecord {
    pub inequality: String,
    pub instance: String,
    pub lhs: f64,
    pub rhs: f64,
    pub lhs_exact: String,
    pub rhs_exact: String,
    pub satisfied: bool,
}

fn frac(num: BigUint, den: &BigUint) -> BigRational {
    BigRational::new(num.into(), den.clone().into())
}

pub const MAX_EXACT_N: usize = 16;

/// `P_pair(L1 ≥ h1, L2 ≤ h2) ≥ P(L1 ≥ h1)·P(L2 ≤ h2)` with `h1` using
/// [`NEG_INF`] and `h2` using [`POS_INF`] for "no constraint".
pub fn verify_two_path_monotone(spec: &PairSpec, h1: &[i64], h2: &[i64]) -> Result<InequalityReport> {
    if spec.n > MAX_EXACT_N || h1.len() != spec.n + 1 || h2.len() != spec.n + 1 {
        return Err(AsepError::Domain("need N <= 16 and h1, h2 on 0..=N".into()));
    }
    let total = count_pairs(spec);
    if total.is_zero() {
        return Err(AsepError::EmptySet(format!("no ordered pair for {spec:?}")));
    }
    let joint = PairCounts::new(*spec, Some(h1), Some(h2)).total().clone();
    let up = spec.upper();
    let lo = spec.lower();
    let p1 = frac(count_paths(&up.clone().with_floor(h1.to_vec())), &count_paths(&up));
    let p2 = frac(count_paths(&lo.clone().with_ceiling(h2.to_vec())), &count_paths(&lo));
    Ok(InequalityReport {
        inequality: "two-path monotonicity",
        instance: format!("{spec:?} h1={h1:?} h2={h2:?}"),
        lhs: frac(joint, &total),
        rhs: p1 * p2,
    })
}

/// Monotone threshold event `∩_j {L(j) ≥ t_j}` or `∩_j {L(j) ≤ t_j}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ThresholdEvent {
    pub increasing: bool,
    /// Use [`NEG_INF`] (increasing) or [`POS_INF`] (decreasing) where unconstrained.
    pub thresholds: Vec<i64>,
}

impl ThresholdEvent {
    pub fn at_least(n: usize, site: usize, t: i64) -> Self {
        let mut thresholds = vec![NEG_INF; n + 1];
        thresholds[site] = t;
        Self { increasing: true, thresholds }
    }

    pub fn at_most(n: usize, site: usize, t: i64) -> Self {
        let mut thresholds = vec![POS_INF; n + 1];
        thresholds[site] = t;
        Self { increasing: false, thresholds }
    }

    fn restrict(&self, spec: &BridgeSpec) -> BridgeSpec {
        let mut s = spec.clone();
        if self.increasing {
            let g = (0..=spec.n).map(|j| spec.lo(j).max(self.thresholds[j])).collect();
            s.floor = Some(g);
        } else {
            let f = (0..=spec.n).map(|j| spec.hi(j).min(self.thresholds[j])).collect();
            s.ceiling = Some(f);
        }
        s
    }

    fn intersect(&self, other: &ThresholdEvent) -> ThresholdEvent {
        let thresholds = self
            .thresholds
            .iter()
            .zip(&other.thresholds)
            .map(|(&a, &b)| if self.increasing { a.max(b) } else { a.min(b) })
            .collect();
        ThresholdEvent { increasing: self.increasing, thresholds }
    }
}

/// `P(B ∩ C) ≥ P(B) P(C)` under the uniform law on `Ω`, exactly.
pub fn verify_fkg(spec: &BridgeSpec, b: &ThresholdEvent, c: &ThresholdEvent) -> Result<InequalityReport> {
    if b.increasing != c.increasing {
        return Err(AsepError::MixedMonotonicity);
    }
    if spec.n > MAX_EXACT_N || b.thresholds.len() != spec.n + 1 || c.thresholds.len() != spec.n + 1 {
        return Err(AsepError::Domain("need N <= 16 and thresholds on 0..=N".into()));
    }
    let total = count_paths(spec);
    if total.is_zero() {
        return Err(AsepError::EmptySet("constrained bridge set is empty".into()));
    }
    let pb = frac(count_paths(&b.restrict(spec)), &total);
    let pc = frac(count_paths(&c.restrict(spec)), &total);
    let pbc = frac(count_paths(&b.intersect(c).restrict(spec)), &total);
    Ok(InequalityReport { inequality: "FKG", instance: format!("{spec:?} B={b:?} C={c:?}"), lhs: pbc, rhs: pb * pc })
}

fn binomial(n: u64, k: u64) -> BigUint {
    if k > n {
        return BigUint::zero();
    }
    let k = k.min(n - k);
    let mut acc = BigUint::one();
    for i in 0..k {
        acc = acc * BigUint::from(n - i) / BigUint::from(i + 1);
    }
    acc
}

/// `P(L(m) = k) = C(m,k) C(N−m,h−k)/C(N,h)` for `k = 0..=min(m, h)` under
/// the uniform bridge from `0` to `h`.
pub fn hypergeometric_onepoint(n: u64, h: u64, m: u64) -> Result<Vec<BigRational>> {
    if m > n || h > n {
        return Err(AsepError::Domain(format!("need 0 <= m, h <= N, got m = {m}, h = {h}, N = {n}")));
    }
    let total = binomial(n, h);
    Ok((0..=m.min(h)).map(|k| frac(binomial(m, k) * binomial(n - m, h - k), &total)).collect())
}

/// `P(L(m) ≤ s)/P(L(m) ≤ t) ≥ N^{−1−t+s}`.
pub fn verify_hypergeometric_ratio(n: u64, h: u64, m: u64, s: u64, t: u64) -> Result<InequalityReport> {
    if s > t || h > n || m > n || h.saturating_sub(s) > n - m || n == 0 {
        return Err(AsepError::Domain(format!("invalid (N,h,m,s,t) = ({n},{h},{m},{s},{t})")));
    }
    let pmf = hypergeometric_onepoint(n, h, m)?;
    let cdf = |x: u64| {
        pmf.iter()
            .take((x + 1).min(pmf.len() as u64) as usize)
            .fold(BigRational::zero(), |a, p| a + p)
    };
    let (ps, pt) = (cdf(s), cdf(t));
    if pt.is_zero() {
        return Err(AsepError::Domain("P(L(m) <= t) vanishes".into()));
    }
    let bound = BigRational::new(1.into(), num_bigint::BigInt::from(n).pow((1 + t - s) as u32));
    Ok(InequalityReport {
        inequality: "hypergeometric ratio",
        instance: format!("N={n} h={h} m={m} s={s} t={t}"),
        lhs: ps / pt,
        rhs: bound,
    })
}

/// Estimate of `P(sup_j |L(j) − mj/N| ≤ M)` for the uniform bridge `0 → m`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FluctuationEstimate {
    pub n: usize,
    pub m: usize,
    pub big_m: f64,
    pub exact: f64,
    pub estimate: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub samples: u64,
    /// `−log(1 − p)·N/M²` at the exact value (infinite when `p = 1`).
    pub collapse: f64,
}

fn band(n: usize, m: usize, big_m: f64) -> BridgeSpec {
    let centre = |j: usize| m as f64 * j as f64 / n as f64;
    let f = (0..=n).map(|j| (centre(j) + big_m + 1e-9).floor() as i64).collect();
    let g = (0..=n).map(|j| (centre(j) - big_m - 1e-9).ceil() as i64).collect();
    BridgeSpec::new(n, 0, m as i64).with_ceiling(f).with_floor(g)
}

/// Exact band probability by counting, plus a Monte Carlo cross-check.
pub fn fluctuation_tail<R: Rng + ?Sized>(
    n: usize,
    m: usize,
    big_m: f64,
    samples: u64,
    rng: &mut R,
) -> Result<FluctuationEstimate> {
    if m > n || !(big_m > 0.0) {
        return Err(AsepError::Domain(format!("need m <= N and M > 0, got m = {m}, M = {big_m}")));
    }
    let free = BridgeSpec::new(n, 0, m as i64);
    let banded = band(n, m, big_m);
    let exact = share(&count_paths(&banded), &BigUint::zero()) * {
        let (a, b) = (count_paths(&banded), count_paths(&free));
        let shift = b.bits().saturating_sub(60);
        let a = (&a >> shift).to_f64().unwrap_or(0.0);
        let b = (&b >> shift).to_f64().unwrap_or(1.0);
        a / b
    };
    let mut hits = 0u64;
    for _ in 0..samples {
        let path = sample_bridge(&free, rng)?;
        if banded.contains(&path) {
            hits += 1;
        }
    }
    let (lo, hi) = wilson_interval(hits, samples, Z95);
    let collapse = if exact >= 1.0 { f64::INFINITY } else { -(1.0 - exact).ln() * n as f64 / (big_m * big_m) };
    Ok(FluctuationEstimate {
        n,
        m,
        big_m,
        exact,
        estimate: if samples > 0 { hits as f64 / samples as f64 } else { f64::NAN },
        ci_low: lo,
        ci_high: hi,
        samples,
        collapse,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn r(p: i64, q: i64) -> BigRational {
        BigRational::new(p.into(), q.into())
    }

    #[test]
    fn count_examples() {
        assert_eq!(count_paths(&BridgeSpec::new(4, 0, 2)), BigUint::from(6u32));
        assert_eq!(count_paths(&BridgeSpec::new(2, 0, 3)), BigUint::zero());
        let spec = BridgeSpec::new(2, 0, 1).with_ceiling(vec![POS_INF, 0, POS_INF]);
        assert_eq!(count_paths(&spec), BigUint::one());
    }

    #[test]
    fn sample_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let path = sample_bridge(&BridgeSpec::new(5, 0, 5), &mut rng).unwrap();
        assert_eq!(path.values, vec![0, 1, 2, 3, 4, 5]);
        let mut ups = 0;
        for _ in 0..20_000 {
            ups += sample_bridge(&BridgeSpec::new(2, 0, 1), &mut rng).unwrap().values[1];
        }
        assert!((ups as f64 / 20_000.0 - 0.5).abs() < 0.02);
        assert!(sample_bridge(&BridgeSpec::new(2, 0, 3), &mut rng).is_err());
        let empty = BridgeSpec::new(2, 0, 1).with_ceiling(vec![POS_INF, -1, POS_INF]);
        assert!(matches!(sample_bridge(&empty, &mut rng), Err(AsepError::EmptySet(_))));
    }

    #[test]
    fn pair_examples() {
        let spec = PairSpec::new(2, 0, 0, 1, 1);
        assert_eq!(count_pairs(&spec), BigUint::from(3u32));
        assert_eq!(enumerate_pairs(&spec).len(), 3);
        let spec = PairSpec::new(1, 2, 2, 2, 2);
        assert_eq!(count_pairs(&spec), BigUint::one());
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = sample_pair(&spec, &mut rng).unwrap();
        assert_eq!(p.upper.values, vec![2, 2]);
    }

    #[test]
    fn pair_sampler_is_uniform() {
        let spec = PairSpec::new(4, 0, -1, 2, 1);
        let states = enumerate_pairs(&spec);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut counts = vec![0u64; states.len()];
        let draws = 40_000;
        for _ in 0..draws {
            let p = sample_pair(&spec, &mut rng).unwrap();
            counts[states.binary_search(&p).unwrap()] += 1;
        }
        let probs = vec![1.0 / states.len() as f64; states.len()];
        let chi = crate::stats::chi_square_gof(&counts, &probs, 5.0);
        assert!(chi.p_value > 1e-3, "{chi:?}");
    }

    #[test]
    fn upper_marginal_dominates_free_bridge() {
        let spec = PairSpec::new(6, 0, 0, 3, 3);
        let states = enumerate_pairs(&spec);
        let free = enumerate_paths(&BridgeSpec::new(6, 0, 3));
        for j in 0..=6 {
            for t in 0..=3 {
                let pair = states.iter().filter(|s| s.upper.values[j] >= t).count() as f64 / states.len() as f64;
                let single = free.iter().filter(|p| p.values[j] >= t).count() as f64 / free.len() as f64;
                assert!(pair >= single - 1e-15);
            }
        }
    }

    #[test]
    fn gibbs_identity_and_preservation() {
        let spec = PairSpec::new(4, 0, 0, 2, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = sample_pair(&spec, &mut rng).unwrap();
        assert_eq!(gibbs_resample(&p, 2, 2, Layer::Upper, &mut rng).unwrap(), p);
        assert!(gibbs_preserves_uniform(&spec).unwrap());
    }

    #[test]
    fn full_interval_resample_has_conditional_law() {
        // Given L1, resampling all of L2 gives the bridge law capped by L1.
        let spec = PairSpec::new(4, 0, 0, 2, 2);
        let states = enumerate_pairs(&spec);
        let k = gibbs_kernel_exact(&states, 0, 4, Layer::Lower);
        for (i, s) in states.iter().enumerate() {
            let capped = BridgeSpec::new(4, 0, 2).with_ceiling(s.upper.values.clone());
            let c = count_paths(&capped);
            for (j, t) in states.iter().enumerate() {
                let want = if t.upper == s.upper { frac(BigUint::one(), &c) } else { BigRational::zero() };
                assert_eq!(k[i][j], want);
            }
        }
    }

    #[test]
    fn gibbs_converges() {
        let spec = PairSpec::new(6, 0, 0, 3, 3);
        let start = PathPair {
            upper: extreme_path(&BridgeSpec::new(6, 0, 3), true).unwrap(),
            lower: extreme_path(&BridgeSpec::new(6, 0, 3), false).unwrap(),
        };
        let tv = gibbs_convergence(&spec, &start, 100).unwrap();
        assert!(tv <= 0.02, "{tv}");
    }

    #[test]
    fn coupling_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let spec = BridgeSpec::new(6, 0, 3);
        for mode in [CouplingMode::Sweeps(20), CouplingMode::FromThePast] {
            let (b, t) = monotone_couple(&spec, &spec, mode, &mut rng).unwrap();
            assert_eq!(b, t);
        }
        let floored = BridgeSpec::new(6, 0, 3).with_floor(vec![0; 7]);
        for _ in 0..2000 {
            let (b, t) = monotone_couple(&spec, &floored, CouplingMode::FromThePast, &mut rng).unwrap();
            assert!(b.dominated_by(&t));
            assert!(spec.contains(&b) && floored.contains(&t));
        }
        assert!(matches!(
            monotone_couple(&floored, &spec, CouplingMode::Sweeps(1), &mut rng),
            Err(AsepError::Unordered(_))
        ));
    }

    #[test]
    fn cftp_marginal_is_uniform() {
        let spec = BridgeSpec::new(6, 0, 3).with_ceiling(vec![POS_INF, 1, 1, 2, 3, 3, 3]);
        let states = enumerate_paths(&spec);
        let mut counts = vec![0u64; states.len()];
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let top = BridgeSpec::new(6, 0, 3);
        for _ in 0..20_000 {
            let (b, _) = monotone_couple(&spec, &top, CouplingMode::FromThePast, &mut rng).unwrap();
            counts[states.binary_search(&b).unwrap()] += 1;
        }
        let probs = vec![1.0 / states.len() as f64; states.len()];
        assert!(crate::stats::chi_square_gof(&counts, &probs, 5.0).p_value > 1e-3);
    }

    #[test]
    fn expectation_monotone_under_floor() {
        let low = enumerate_paths(&BridgeSpec::new(8, 0, 4));
        let high = enumerate_paths(&BridgeSpec::new(8, 0, 4).with_floor(vec![0, 0, 1, 1, 2, 2, 3, 3, 4]));
        for j in 0..=8 {
            let ml: f64 = low.iter().map(|p| p.values[j] as f64).sum::<f64>() / low.len() as f64;
            let mh: f64 = high.iter().map(|p| p.values[j] as f64).sum::<f64>() / high.len() as f64;
            assert!(mh >= ml);
        }
    }

    #[test]
    fn two_path_examples() {
        let spec = PairSpec::new(4, 0, 0, 2, 2);
        let r0 = verify_two_path_monotone(&spec, &[NEG_INF; 5], &[POS_INF; 5]).unwrap();
        assert_eq!((r0.lhs.clone(), r0.rhs.clone()), (r(1, 1), r(1, 1)));
        let mut h1 = vec![NEG_INF; 5];
        let mut h2 = vec![POS_INF; 5];
        h1[2] = 1;
        h2[2] = 1;
        let rep = verify_two_path_monotone(&spec, &h1, &h2).unwrap();
        assert!(rep.satisfied());
        // Brute force of both sides.
        let pairs = enumerate_pairs(&spec);
        let hits = pairs.iter().filter(|p| p.upper.values[2] >= 1 && p.lower.values[2] <= 1).count();
        assert_eq!(rep.lhs, r(hits as i64, pairs.len() as i64));
        let free = enumerate_paths(&BridgeSpec::new(4, 0, 2));
        let a = free.iter().filter(|p| p.values[2] >= 1).count() as i64;
        let b = free.iter().filter(|p| p.values[2] <= 1).count() as i64;
        assert_eq!(rep.rhs, r(a * b, (free.len() * free.len()) as i64));
    }

    #[test]
    fn fkg_examples() {
        let spec = BridgeSpec::new(6, 0, 3);
        let b = ThresholdEvent::at_least(6, 2, 1);
        let rep = verify_fkg(&spec, &b, &b).unwrap();
        assert!(rep.satisfied());
        let c = ThresholdEvent::at_least(6, 4, 2);
        let rep = verify_fkg(&spec, &b, &c).unwrap();
        assert!(rep.slack() > BigRational::zero());
        let d = ThresholdEvent::at_most(6, 2, 0);
        assert_eq!(verify_fkg(&spec, &b, &d), Err(AsepError::MixedMonotonicity));
    }

    #[test]
    fn hypergeometric_examples() {
        assert_eq!(hypergeometric_onepoint(4, 2, 2).unwrap(), vec![r(1, 6), r(4, 6), r(1, 6)]);
        assert_eq!(hypergeometric_onepoint(7, 3, 0).unwrap(), vec![r(1, 1)]);
        let rep = verify_hypergeometric_ratio(9, 4, 5, 2, 2).unwrap();
        assert_eq!(rep.lhs, r(1, 1));
        let rep = verify_hypergeometric_ratio(20, 10, 10, 3, 5).unwrap();
        assert!(rep.satisfied());
        assert_eq!(rep.rhs, r(1, 8000));
    }

    #[test]
    fn hypergeometric_matches_sampler() {
        let pmf = hypergeometric_onepoint(6, 3, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut counts = vec![0u64; pmf.len()];
        for _ in 0..100_000 {
            let p = sample_bridge(&BridgeSpec::new(6, 0, 3), &mut rng).unwrap();
            counts[p.values[3] as usize] += 1;
        }
        let probs: Vec<f64> = pmf.iter().map(|x| x.to_f64().unwrap()).collect();
        assert!(crate::stats::chi_square_gof(&counts, &probs, 5.0).p_value > 1e-3);
    }

    #[test]
    fn fluctuation_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let e = fluctuation_tail(10, 5, 10.0, 100, &mut rng).unwrap();
        assert_eq!((e.exact, e.estimate), (1.0, 1.0));
        let e = fluctuation_tail(10, 5, 1.0, 20_000, &mut rng).unwrap();
        // Brute force over all C(10,5) = 252 bridges.
        let all = enumerate_paths(&BridgeSpec::new(10, 0, 5));
        assert_eq!(all.len(), 252);
        let ok = all
            .iter()
            .filter(|p| p.values.iter().enumerate().all(|(j, &v)| (v as f64 - 0.5 * j as f64).abs() <= 1.0))
            .count();
        assert!((e.exact - ok as f64 / 252.0).abs() < 1e-15);
        assert!(e.ci_low <= e.exact && e.exact <= e.ci_high);
    }
}
