//! Reproducible experiments with machine-readable verdicts.
//!
//! Each `run_*` function is deterministic given its inputs (seeds
//! included), evaluates independent grid points in parallel, and returns a
//! report whose `passed` flag compares the worst observed value with the
//! tolerance it was given.

use num_bigint::BigUint;
use num_rational::BigRational;
use num_traits::Zero;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::bridges::{self, BridgeSpec, PairSpec, ThresholdEvent, NEG_INF, POS_INF};
use crate::error::{AsepError, Result};
use crate::mpa::{self, DEFAULT_STATE_BUDGET};
use crate::params::FanParams;
use crate::qkernel::NumericMode;
use crate::ratefn::{finite_dim_rate, rate_closed, rate_variational, FiniteDimGrid, PiecewiseLinearProfile, PinnedSpec};
use crate::report::{fmt_f64, Table};
use crate::scalar::{total_variation, Scalar};
use crate::twolayer::{self, SeparationEstimate, WindowSpec};

/// Named experiment with its grid, schedule, tolerance and seeds.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentPlan {
    pub name: String,
    pub grid: Vec<FanParams>,
    pub ns: Vec<usize>,
    pub tolerance: f64,
    pub seeds: Vec<u64>,
}

impl ExperimentPlan {
    pub fn validate(&self) -> Result<()> {
        if self.ns.is_empty() {
            return Err(AsepError::InvalidConfig(format!("plan `{}` has no N schedule", self.name)));
        }
        if !(self.tolerance > 0.0) {
            return Err(AsepError::InvalidConfig(format!("plan `{}` needs a positive tolerance", self.name)));
        }
        self.grid.iter().try_for_each(FanParams::require_fan)
    }
}

/// Pass/fail outcome of an experiment.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Verdict {
    pub experiment: String,
    pub passed: bool,
    pub worst: f64,
    pub tolerance: f64,
    pub note: String,
}

/// Twelve fan points covering the three phases, `q ∈ {0, 0.3, 0.5, 0.7}`
/// and `c, d ∈ {0, −0.4}`.
pub fn acceptance_grid() -> Vec<FanParams> {
    [
        (0.0, 0.0, 0.0, 0.0, 0.0),
        (0.5, 0.5, 0.0, 0.0, 0.0),
        (2.0, 0.25, 0.0, 0.0, 0.0),
        (0.25, 3.0, 0.0, 0.0, 0.0),
        (0.5, 0.5, -0.4, -0.4, 0.3),
        (0.25, 0.75, -0.4, 0.0, 0.3),
        (1.5, 0.5, 0.0, -0.4, 0.3),
        (0.5, 0.5, -0.4, -0.4, 0.7),
        (0.0, 0.625, -0.4, -0.4, 0.7),
        (0.875, 0.0, 0.0, -0.4, 0.7),
        (0.75, 1.25, -0.4, -0.4, 0.0),
        (0.25, 0.25, -0.4, -0.4, 0.5),
    ]
    .into_iter()
    .map(|(a, b, c, d, q)| FanParams::new(a, b, c, d, q).expect("valid grid point"))
    .collect()
}

/// One `(point, N)` comparison of the first-layer marginal with the MPA
/// height law.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MarginalRow {
    pub params: FanParams,
    pub n: usize,
    pub tv: f64,
    /// Whether the distance is exactly zero in rational arithmetic.
    pub exact_zero: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MarginalReport {
    pub rows: Vec<MarginalRow>,
    pub max_tv: f64,
    pub verdict: Verdict,
}

/// Truncation used for rational comparisons. Both routes are truncated at
/// the same gap bound, where they agree term by term, so a small bound
/// keeps the rational arithmetic cheap without weakening the identity.
pub fn exact_check_dim(p: &FanParams, n: usize) -> Result<usize> {
    Ok(mpa::truncation(p, n, NumericMode::float().tol())?.dim.min(n + 2))
}

fn tv_exact(p: &FanParams, n: usize) -> Result<(f64, bool)> {
    let dim = exact_check_dim(p, n)?;
    let layer: Vec<BigRational> = twolayer::marginal_first_layer_in(p, n, dim);
    let table: Vec<BigRational> = mpa::stationary_table_in(p, n, dim);
    let tv = total_variation(&layer, &table);
    Ok((tv.to_f64_lossy(), tv == BigRational::from_integer(0.into())))
}

/// First-layer marginal of the two-layer measure against the stationary
/// height law, over every grid point and `N`.
pub fn run_marginal_grid(grid: &[FanParams], ns: &[usize], mode: NumericMode, tol: f64) -> Result<MarginalReport> {
    grid.iter().try_for_each(FanParams::require_fan)?;
    mode.validate()?;
    let jobs: Vec<(FanParams, usize)> = grid.iter().flat_map(|p| ns.iter().map(move |&n| (*p, n))).collect();
    let rows = jobs
        .par_iter()
        .map(|&(p, n)| -> Result<MarginalRow> {
            match mode {
                NumericMode::ExactRational => {
                    let (tv, zero) = tv_exact(&p, n)?;
                    Ok(MarginalRow { params: p, n, tv, exact_zero: Some(zero) })
                }
                NumericMode::LogFloat { .. } => {
                    let layer = twolayer::marginal_first_layer(&p, n, mode)?.value;
                    let table = mpa::stationary_table(&p, n, mode)?.value;
                    Ok(MarginalRow { params: p, n, tv: total_variation(&layer, &table), exact_zero: None })
                }
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let max_tv = rows.iter().map(|r| r.tv).fold(0.0, f64::max);
    let passed = match mode {
        NumericMode::ExactRational => rows.iter().all(|r| r.exact_zero == Some(true)),
        NumericMode::LogFloat { .. } => max_tv <= tol,
    };
    let verdict = Verdict {
        experiment: "two-layer marginal".into(),
        passed,
        worst: max_tv,
        tolerance: tol,
        note: format!("{} points x {} sizes", grid.len(), ns.len()),
    };
    Ok(MarginalReport { rows, max_tv, verdict })
}

/// `(ρ, N, −(1/N) log P(λ1(N) = ⌊ρN⌋), I_ref)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LdpRow {
    pub rho: f64,
    pub n: usize,
    pub empirical: f64,
    pub reference: f64,
}

impl LdpRow {
    pub fn gap(&self) -> f64 {
        (self.empirical - self.reference).abs()
    }
}

pub const MAX_LDP_N: usize = 400;

/// Exact log-probabilities of the pinned endpoint height against the
/// finite-dimensional rate at `θ = 1`.
pub fn ldp_convergence(p: &FanParams, rhos: &[f64], ns: &[usize], grid: FiniteDimGrid) -> Result<Vec<LdpRow>> {
    p.require_fan()?;
    if let Some(&n) = ns.iter().find(|&&n| n == 0 || n > MAX_LDP_N) {
        return Err(AsepError::Domain(format!("N = {n} outside 1..={MAX_LDP_N}")));
    }
    if let Some(rho) = rhos.iter().find(|r| !(0.0..=1.0).contains(*r)) {
        return Err(AsepError::Domain(format!("density {rho} not in [0, 1]")));
    }
    let refs = rhos
        .par_iter()
        .map(|&rho| finite_dim_rate(&PinnedSpec::new(vec![1.0], vec![rho])?, p.a, p.b, grid))
        .collect::<Result<Vec<f64>>>()?;
    let pmfs = ns
        .par_iter()
        .map(|&n| mpa::height_marginal_dist(p, n, &[n], NumericMode::float().tol(), DEFAULT_STATE_BUDGET))
        .collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::new();
    for (&rho, &reference) in rhos.iter().zip(&refs) {
        for (&n, pmf) in ns.iter().zip(&pmfs) {
            // Guard against ρN landing a hair below an integer.
            let k = (rho * n as f64 + 1e-9).floor() as usize;
            let prob = pmf.prob(&[k]);
            rows.push(LdpRow { rho, n, empirical: -prob.ln() / n as f64, reference });
        }
    }
    Ok(rows)
}

pub fn ldp_table(rows: &[LdpRow]) -> Table {
    let mut t = Table::new(["rho", "n", "empirical", "reference", "gap"]);
    for r in rows {
        t.push(vec![fmt_f64(r.rho), r.n.to_string(), fmt_f64(r.empirical), fmt_f64(r.reference), fmt_f64(r.gap())]);
    }
    t
}

/// Gap within `tol` at the largest `N` and non-increasing along the
/// schedule, for every density.
pub fn ldp_verdict(rows: &[LdpRow], tol: f64) -> Verdict {
    let mut rhos: Vec<f64> = rows.iter().map(|r| r.rho).collect();
    rhos.dedup();
    let mut worst: f64 = 0.0;
    let mut monotone = true;
    for rho in rhos {
        let mut series: Vec<&LdpRow> = rows.iter().filter(|r| r.rho == rho).collect();
        series.sort_by_key(|r| r.n);
        monotone &= series.windows(2).all(|w| w[1].gap() <= w[0].gap());
        worst = worst.max(series.last().map_or(0.0, |r| r.gap()));
    }
    Verdict {
        experiment: "ldp convergence".into(),
        passed: worst <= tol && monotone,
        worst,
        tolerance: tol,
        note: format!("gap non-increasing in N: {monotone}"),
    }
}

/// `(ρ, I_closed, I_variational, gap)` for line profiles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RateRow {
    pub rho: f64,
    pub closed: f64,
    pub variational: Option<f64>,
    pub gap: Option<f64>,
}

/// Rate of the line profiles `f = ρx`; the variational column is computed
/// only when `k` is given.
pub fn rate_curve(a: f64, b: f64, rhos: &[f64], k: Option<usize>) -> Result<Vec<RateRow>> {
    rhos.par_iter()
        .map(|&rho| {
            let f = PiecewiseLinearProfile::line(rho);
            let closed = rate_closed(&f, a, b)?;
            let var = k.map(|k| rate_variational(&f, a, b, k)).transpose()?;
            Ok(RateRow { rho, closed, variational: var.map(|v| v.value), gap: var.map(|v| v.gap) })
        })
        .collect()
}

pub fn rate_table(rows: &[RateRow]) -> Table {
    let opt = |x: Option<f64>| x.map(fmt_f64).unwrap_or_default();
    let mut t = Table::new(["rho", "i_closed", "i_variational", "gap"]);
    for r in rows {
        t.push(vec![fmt_f64(r.rho), fmt_f64(r.closed), opt(r.variational), opt(r.gap)]);
    }
    t
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoltzmannReport {
    pub params: FanParams,
    pub window: WindowSpec,
    /// `(N, (1/N) log ratio)`.
    pub rows: Vec<(usize, f64)>,
    pub verdict: Verdict,
}

/// Windowed Boltzmann ratio trend: `|value| ≤ tol` at the largest `N` and
/// strictly below its value at the smallest.
pub fn run_boltzmann_ratio(p: &FanParams, w: &WindowSpec, ns: &[usize], tol: f64) -> Result<BoltzmannReport> {
    p.require_fan()?;
    let rows = ns
        .par_iter()
        .map(|&n| Ok(twolayer::ratio_window_logasy(p, w, &[n], NumericMode::float().tol())?[0]))
        .collect::<Result<Vec<_>>>()?;
    let first = rows.first().map_or(0.0, |r| r.1.abs());
    let last = rows.last().map_or(0.0, |r| r.1.abs());
    let trivial = p.c == 0.0 && p.d == 0.0 && p.q == 0.0;
    let passed = last <= tol && (last < first || (trivial && last == 0.0));
    let verdict = Verdict {
        experiment: "boltzmann ratio".into(),
        passed,
        worst: last,
        tolerance: tol,
        note: format!("|value| at smallest N: {}", fmt_f64(first)),
    };
    Ok(BoltzmannReport { params: *p, window: w.clone(), rows, verdict })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeparationReport {
    pub a: f64,
    pub b: f64,
    pub r: usize,
    pub eps: f64,
    pub seed: u64,
    pub rows: Vec<SeparationEstimate>,
    pub verdict: Verdict,
}

/// Separation probabilities with one independent stream per `N`, seeded by
/// `seed + N`.
#[allow(clippy::too_many_arguments)]
pub fn run_separation(
    a: f64,
    b: f64,
    r: usize,
    eps: f64,
    w: &WindowSpec,
    ns: &[usize],
    accepted: u64,
    seed: u64,
) -> Result<SeparationReport> {
    FanParams::tasep(a, b)?.require_fan()?;
    let rows = ns
        .par_iter()
        .map(|&n| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(n as u64));
            twolayer::separation_probability(a, b, r, eps, w, n, accepted, &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;
    let worst = rows.iter().map(|e| e.bound / e.estimate).fold(0.0, f64::max);
    let verdict = Verdict {
        experiment: "separation estimate".into(),
        passed: rows.iter().all(|e| e.estimate > e.bound && e.accepted >= accepted),
        worst,
        tolerance: 1.0,
        note: "worst = max bound/estimate; passes below 1".into(),
    };
    Ok(SeparationReport { a, b, r, eps, seed, rows, verdict })
}

/// Violation counts of the randomized bridge-inequality suites.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BridgeSuiteReport {
    pub max_n: usize,
    pub seed: u64,
    /// `(instances, violations)` per suite.
    pub two_path: (usize, usize),
    pub fkg: (usize, usize),
    pub hypergeometric: (usize, usize),
    /// Pair spaces on which one Gibbs update was checked to fix the uniform law.
    pub gibbs_specs: Vec<PairSpec>,
    pub gibbs_exact: bool,
    pub verdict: Verdict,
}

fn random_path<R: Rng>(n: usize, x: i64, rng: &mut R) -> Vec<i64> {
    let mut v = vec![x];
    for _ in 0..n {
        let last = v[v.len() - 1];
        v.push(last + rng.random_range(0..=1));
    }
    v
}

/// Each site constrained with probability 0.3, else `none`.
fn random_thresholds<R: Rng>(n: usize, lo: i64, hi: i64, none: i64, rng: &mut R) -> Vec<i64> {
    (0..=n).map(|_| if rng.random_bool(0.3) { rng.random_range(lo..=hi) } else { none }).collect()
}

fn random_pair_instance<R: Rng>(max_n: usize, rng: &mut R) -> Option<(PairSpec, Vec<i64>, Vec<i64>)> {
    let n = rng.random_range(1..=max_n);
    let x2 = rng.random_range(-2..=2i64);
    let x1 = x2 + rng.random_range(0..=2);
    let y1 = x1 + rng.random_range(0..=n as i64);
    let y2 = x2 + rng.random_range(0..=n as i64);
    let spec = PairSpec::new(n, x1, x2, y1, y2);
    if bridges::count_pairs(&spec).is_zero() {
        return None;
    }
    let h1 = random_thresholds(n, x2, y1, NEG_INF, rng);
    let h2 = random_thresholds(n, x2, y1, POS_INF, rng);
    Some((spec, h1, h2))
}

fn random_fkg_instance<R: Rng>(max_n: usize, rng: &mut R) -> Option<(BridgeSpec, ThresholdEvent, ThresholdEvent)> {
    let n = rng.random_range(1..=max_n);
    let x = rng.random_range(-2..=2i64);
    let y = x + rng.random_range(0..=n as i64);
    let mut spec = BridgeSpec::new(n, x, y);
    if rng.random_bool(0.5) {
        let mut g = random_path(n, x - rng.random_range(0..=2), rng);
        g.iter_mut().for_each(|v| *v -= rng.random_range(0..=1));
        spec = spec.with_floor(g);
    }
    if rng.random_bool(0.5) {
        let f = random_path(n, x + rng.random_range(0..=2), rng);
        spec = spec.with_ceiling(f);
    }
    if bridges::count_paths(&spec) == BigUint::zero() {
        return None;
    }
    let increasing = rng.random_bool(0.5);
    let none = if increasing { NEG_INF } else { POS_INF };
    let b = ThresholdEvent { increasing, thresholds: random_thresholds(n, x, y, none, rng) };
    let c = ThresholdEvent { increasing, thresholds: random_thresholds(n, x, y, none, rng) };
    Some((spec, b, c))
}

fn random_hyper_instance<R: Rng>(max_n: usize, rng: &mut R) -> Option<(u64, u64, u64, u64, u64)> {
    let n = rng.random_range(1..=max_n as u64);
    let h = rng.random_range(0..=n);
    let m = rng.random_range(0..=n);
    let t = rng.random_range(0..=m.min(h));
    let s = rng.random_range(0..=t);
    (h.saturating_sub(s) <= n - m).then_some((n, h, m, s, t))
}

/// Exact rational checks of the two-path monotonicity, FKG and
/// hypergeometric-ratio inequalities on `instances` random non-empty
/// instances each with `N ≤ max_n`, plus exact invariance of the uniform
/// pair law under a Gibbs update on small pair spaces.
pub fn run_bridge_suites(instances: usize, max_n: usize, seed: u64) -> Result<BridgeSuiteReport> {
    if max_n == 0 || max_n > bridges::MAX_EXACT_N {
        return Err(AsepError::Domain(format!("max N = {max_n} outside 1..={}", bridges::MAX_EXACT_N)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pairs = Vec::with_capacity(instances);
    while pairs.len() < instances {
        pairs.extend(random_pair_instance(max_n, &mut rng));
    }
    let mut fkgs = Vec::with_capacity(instances);
    while fkgs.len() < instances {
        fkgs.extend(random_fkg_instance(max_n, &mut rng));
    }
    let mut hypers = Vec::with_capacity(instances);
    while hypers.len() < instances {
        hypers.extend(random_hyper_instance(max_n, &mut rng));
    }
    let count = |v: Vec<bool>| v.iter().filter(|&&ok| !ok).count();
    let vp = count(
        pairs
            .par_iter()
            .map(|(s, h1, h2)| Ok(bridges::verify_two_path_monotone(s, h1, h2)?.satisfied()))
            .collect::<Result<_>>()?,
    );
    let vf = count(fkgs.par_iter().map(|(s, b, c)| Ok(bridges::verify_fkg(s, b, c)?.satisfied())).collect::<Result<_>>()?);
    let vh = count(
        hypers
            .par_iter()
            .map(|&(n, h, m, s, t)| Ok(bridges::verify_hypergeometric_ratio(n, h, m, s, t)?.satisfied()))
            .collect::<Result<_>>()?,
    );
    let gibbs_specs: Vec<PairSpec> = [(2, 0, 0, 1, 1), (4, 0, 0, 2, 2), (5, 1, 0, 3, 2), (6, 0, 0, 3, 3), (6, 2, 0, 4, 3)]
        .into_iter()
        .filter(|s| s.0 <= max_n.max(2))
        .map(|(n, x1, x2, y1, y2)| PairSpec::new(n, x1, x2, y1, y2))
        .collect();
    let gibbs_exact = gibbs_specs
        .par_iter()
        .map(bridges::gibbs_preserves_uniform)
        .collect::<Result<Vec<bool>>>()?
        .into_iter()
        .all(|g| g);
    let violations = vp + vf + vh;
    let verdict = Verdict {
        experiment: "bridge inequalities".into(),
        passed: violations == 0 && gibbs_exact,
        worst: violations as f64,
        tolerance: 0.0,
        note: format!("Gibbs update exactly preserves uniform law: {gibbs_exact}"),
    };
    Ok(BridgeSuiteReport {
        max_n,
        seed,
        two_path: (instances, vp),
        fkg: (instances, vf),
        hypergeometric: (instances, vh),
        gibbs_specs,
        gibbs_exact,
        verdict,
    })
}
