//! Gillespie simulation of open ASEP.

use rand::Rng;
use serde::Serialize;

use crate::error::{AsepError, Result};
use crate::mpa::config_index;
use crate::params::BoundaryRates;
use crate::ratefn::PiecewiseLinearProfile;

/// Largest `N` for which the empirical measure over all configurations is
/// recorded.
pub const MAX_TABLE_N: usize = 12;

/// All transitions out of `tau` with their rates.
pub fn enabled_transitions(tau: &[bool], rates: &BoundaryRates) -> Vec<(Vec<bool>, f64)> {
    let mut out = Vec::new();
    each_transition(tau, rates, |kind, rate| {
        let mut next = tau.to_vec();
        kind.apply(&mut next);
        out.push((next, rate));
    });
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum EventKind {
    EnterLeft,
    ExitLeft,
    ExitRight,
    EnterRight,
    /// Particle at the given (0-based) site hops right.
    HopRight(usize),
    /// Particle at the given (0-based) site hops left.
    HopLeft(usize),
}

impl EventKind {
    fn apply(self, tau: &mut [bool]) {
        let n = tau.len();
        match self {
            EventKind::EnterLeft => tau[0] = true,
            EventKind::ExitLeft => tau[0] = false,
            EventKind::ExitRight => tau[n - 1] = false,
            EventKind::EnterRight => tau[n - 1] = true,
            EventKind::HopRight(i) => tau.swap(i, i + 1),
            EventKind::HopLeft(i) => tau.swap(i, i - 1),
        }
    }
}

fn each_transition(tau: &[bool], r: &BoundaryRates, mut f: impl FnMut(EventKind, f64)) {
    let n = tau.len();
    if n == 0 {
        return;
    }
    let mut emit = |k, rate: f64| {
        if rate > 0.0 {
            f(k, rate)
        }
    };
    if tau[0] {
        emit(EventKind::ExitLeft, r.gamma);
    } else {
        emit(EventKind::EnterLeft, r.alpha);
    }
    for i in 0..n {
        if !tau[i] {
            continue;
        }
        if i + 1 < n && !tau[i + 1] {
            emit(EventKind::HopRight(i), 1.0);
        }
        if i > 0 && !tau[i - 1] {
            emit(EventKind::HopLeft(i), r.q);
        }
    }
    if tau[n - 1] {
        emit(EventKind::ExitRight, r.beta);
    } else {
        emit(EventKind::EnterRight, r.delta);
    }
}

/// Occupation-time statistics collected after burn-in.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimStats {
    pub n: usize,
    /// Time spent in each configuration (index with `τ₁` as the most
    /// significant bit); present when `N ≤ MAX_TABLE_N`.
    pub config_time: Option<Vec<f64>>,
    /// Time-integrated occupation of each site.
    pub site_time: Vec<f64>,
    pub events: u64,
    pub total_time: f64,
}

impl SimStats {
    /// Empirical stationary measure over configurations.
    pub fn empirical_measure(&self) -> Option<Vec<f64>> {
        self.config_time
            .as_ref()
            .map(|t| t.iter().map(|x| x / self.total_time).collect())
    }

    pub fn site_densities(&self) -> Vec<f64> {
        self.site_time.iter().map(|x| x / self.total_time).collect()
    }
}

/// How long to run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Budget {
    /// Until time `horizon`, statistics from time `burnin` on.
    Time { horizon: f64, burnin: f64 },
    /// For `events` jumps, statistics after the first `burnin` jumps.
    Events { events: u64, burnin: u64 },
}

impl Budget {
    /// `events` jumps with the default 10% burn-in.
    pub fn events(events: u64) -> Self {
        Budget::Events { events, burnin: events / 10 }
    }

    /// Horizon `t` with the default 10% burn-in.
    pub fn time(horizon: f64) -> Self {
        Budget::Time { horizon, burnin: horizon / 10.0 }
    }
}

/// Simulates from the empty lattice with exponential holding times and
/// accumulates holding-time-weighted statistics.
pub fn gillespie_run<R: Rng + ?Sized>(
    rates: &BoundaryRates,
    n: usize,
    budget: Budget,
    rng: &mut R,
) -> Result<SimStats> {
    rates.validate()?;
    if n == 0 {
        return Err(AsepError::Domain("N must be positive".into()));
    }
    match budget {
        Budget::Time { horizon, burnin } if !(horizon > burnin && burnin >= 0.0) => {
            return Err(AsepError::Domain(format!("need horizon > burnin >= 0, got {horizon}, {burnin}")));
        }
        Budget::Events { events, burnin } if events <= burnin => {
            return Err(AsepError::Domain("event budget must exceed burn-in".into()));
        }
        _ => {}
    }
    let mut tau = vec![false; n];
    let mut config_time = (n <= MAX_TABLE_N).then(|| vec![0.0; 1 << n]);
    let mut site_time = vec![0.0; n];
    let mut t = 0.0;
    let mut events = 0u64;
    let mut total = 0.0;
    let mut moves: Vec<(EventKind, f64)> = Vec::with_capacity(2 * n + 2);
    loop {
        moves.clear();
        each_transition(&tau, rates, |k, r| moves.push((k, r)));
        let total_rate: f64 = moves.iter().map(|m| m.1).sum();
        let hold = if total_rate > 0.0 {
            -(1.0 - rng.random::<f64>()).ln() / total_rate
        } else {
            f64::INFINITY
        };
        // Portion of [t, t + hold) that counts towards the statistics.
        let (counted, stop) = match budget {
            Budget::Time { horizon, burnin } => {
                let end = (t + hold).min(horizon);
                ((end - t.max(burnin)).max(0.0), t + hold >= horizon)
            }
            Budget::Events { events: e, burnin } => {
                let c = if events >= burnin { hold } else { 0.0 };
                (c, events + 1 >= e)
            }
        };
        if counted > 0.0 {
            if !counted.is_finite() {
                return Err(AsepError::Domain("absorbing state reached".into()));
            }
            total += counted;
            if let Some(ct) = config_time.as_mut() {
                ct[config_index(&tau)] += counted;
            }
            for (s, &occ) in site_time.iter_mut().zip(&tau) {
                if occ {
                    *s += counted;
                }
            }
        }
        if stop {
            break;
        }
        t += hold;
        let mut u = rng.random::<f64>() * total_rate;
        let mut chosen = moves[moves.len() - 1].0;
        for &(k, r) in &moves {
            if u < r {
                chosen = k;
                break;
            }
            u -= r;
        }
        chosen.apply(&mut tau);
        events += 1;
    }
    Ok(SimStats { n, config_time, site_time, events, total_time: total })
}

/// `h(k/N) = (1/N) Σ_{i≤k} τ_i`, linearly interpolated.
pub fn height_profile(tau: &[bool]) -> PiecewiseLinearProfile {
    let n = tau.len().max(1);
    let mut xs = Vec::with_capacity(tau.len() + 1);
    let mut ys = Vec::with_capacity(tau.len() + 1);
    let mut h = 0usize;
    xs.push(0.0);
    ys.push(0.0);
    for (k, &t) in tau.iter().enumerate() {
        h += t as usize;
        xs.push((k + 1) as f64 / n as f64);
        ys.push(h as f64 / n as f64);
    }
    if tau.is_empty() {
        xs.push(1.0);
        ys.push(0.0);
    }
    PiecewiseLinearProfile::new(xs, ys).expect("partial sums give an admissible profile")
}
