//! Small statistics helpers: Wilson intervals and chi-square tests.

use serde::Serialize;
use statrs::distribution::{ChiSquared, ContinuousCDF};

/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.959_963_984_540_054;

/// Wilson score interval for a binomial proportion.
pub fn wilson_interval(successes: u64, trials: u64, z: f64) -> (f64, f64) {
    if trials == 0 {
        return (0.0, 1.0);
    }
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    let lo = if successes == 0 { 0.0 } else { (center - half).max(0.0) };
    let hi = if successes == trials { 1.0 } else { (center + half).min(1.0) };
    (lo, hi)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ChiSquareResult {
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
    /// Number of cells after pooling sparse ones.
    pub cells: usize,
}

/// Pearson goodness-of-fit test of `observed` counts against `probs`.
///
/// Cells with expected count below `min_expected` are pooled into a single
/// cell (which is itself merged into the smallest remaining cell if still
/// too sparse), the usual validity condition for the chi-square
/// approximation.
pub fn chi_square_gof(observed: &[u64], probs: &[f64], min_expected: f64) -> ChiSquareResult {
    assert_eq!(observed.len(), probs.len());
    let total: u64 = observed.iter().sum();
    let n = total as f64;
    let psum: f64 = probs.iter().sum();
    let mut cells: Vec<(f64, f64)> = Vec::new();
    let (mut pool_o, mut pool_e) = (0.0, 0.0);
    for (&o, &p) in observed.iter().zip(probs) {
        let e = n * p / psum;
        if e < min_expected {
            pool_o += o as f64;
            pool_e += e;
        } else {
            cells.push((o as f64, e));
        }
    }
    if pool_e > 0.0 || pool_o > 0.0 {
        if pool_e >= min_expected || cells.is_empty() {
            cells.push((pool_o, pool_e));
        } else {
            let i = (0..cells.len())
                .min_by(|&i, &j| cells[i].1.partial_cmp(&cells[j].1).unwrap())
                .unwrap();
            cells[i].0 += pool_o;
            cells[i].1 += pool_e;
        }
    }
    let statistic: f64 = cells
        .iter()
        .map(|&(o, e)| if e > 0.0 { (o - e) * (o - e) / e } else if o > 0.0 { f64::INFINITY } else { 0.0 })
        .sum();
    let dof = cells.len().saturating_sub(1);
    let p_value = if dof == 0 {
        1.0
    } else if !statistic.is_finite() {
        0.0
    } else {
        let dist = ChiSquared::new(dof as f64).expect("positive degrees of freedom");
        1.0 - dist.cdf(statistic)
    };
    ChiSquareResult { statistic, dof, p_value, cells: cells.len() }
}
