//! Boundary rates of open ASEP, the `(a, b, c, d, q)` reparameterization and
//! the phase diagram.

use serde::{Deserialize, Serialize};

use crate::error::{AsepError, Result};

/// Jump rates of open ASEP: entry `alpha` / exit `gamma` at site 1, exit
/// `beta` / entry `delta` at site N, bulk hops at rate 1 (right) and `q`
/// (left).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundaryRates {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub delta: f64,
    pub q: f64,
}

/// The `(a, b, c, d, q)` parameters, with `a, b ≥ 0`, `-1 < c, d ≤ 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FanParams {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    pub q: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Phase {
    MaximalCurrent,
    HighDensity,
    LowDensity,
    PhaseBoundary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Region {
    Fan,
    Shock,
    RegionBoundary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseInfo {
    pub phase: Phase,
    pub region: Region,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Root {
    Plus,
    Minus,
}

fn check_q(q: f64) -> Result<()> {
    if !(0.0..1.0).contains(&q) {
        return Err(AsepError::Domain(format!("q = {q} not in [0, 1)")));
    }
    Ok(())
}

/// The two roots of `x z² − (1 − q − x + y) z − y = 0`.
///
/// The larger-magnitude root is taken from the quadratic formula and the
/// other from the product of roots `−y/x`, so neither suffers cancellation.
pub fn phi(x: f64, y: f64, q: f64, root: Root) -> Result<f64> {
    if !(x > 0.0) || !(y >= 0.0) || !x.is_finite() || !y.is_finite() {
        return Err(AsepError::Domain(format!(
            "phi requires x > 0 and y >= 0, got x = {x}, y = {y}"
        )));
    }
    check_q(q)?;
    let (plus, minus) = phi_pair(x, y, q);
    Ok(match root {
        Root::Plus => plus,
        Root::Minus => minus,
    })
}

fn phi_pair(x: f64, y: f64, q: f64) -> (f64, f64) {
    let bq = 1.0 - q - x + y;
    let disc = (bq * bq + 4.0 * x * y).sqrt();
    if bq >= 0.0 {
        let plus = (bq + disc) / (2.0 * x);
        let minus = if plus > 0.0 { -y / (x * plus) } else { 0.0 };
        (plus, minus + 0.0)
    } else {
        let minus = (bq - disc) / (2.0 * x);
        let plus = -y / (x * minus);
        (plus + 0.0, minus)
    }
}

impl BoundaryRates {
    pub fn new(alpha: f64, beta: f64, gamma: f64, delta: f64, q: f64) -> Result<Self> {
        let r = Self { alpha, beta, gamma, delta, q };
        r.validate()?;
        Ok(r)
    }

    pub fn tasep(alpha: f64, beta: f64) -> Result<Self> {
        Self::new(alpha, beta, 0.0, 0.0, 0.0)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.alpha > 0.0
            && self.beta > 0.0
            && self.gamma >= 0.0
            && self.delta >= 0.0
            && [self.alpha, self.beta, self.gamma, self.delta].iter().all(|v| v.is_finite());
        if !ok {
            return Err(AsepError::Domain(format!(
                "rates require alpha, beta > 0 and gamma, delta >= 0: {self:?}"
            )));
        }
        check_q(self.q)
    }

    pub fn to_fan(&self) -> Result<FanParams> {
        self.validate()?;
        let (a, c) = phi_pair(self.alpha, self.gamma, self.q);
        let (b, d) = phi_pair(self.beta, self.delta, self.q);
        Ok(FanParams { a, b, c, d, q: self.q })
    }
}

impl FanParams {
    pub fn new(a: f64, b: f64, c: f64, d: f64, q: f64) -> Result<Self> {
        let p = Self { a, b, c, d, q };
        p.validate()?;
        Ok(p)
    }

    /// Open TASEP: `c = d = q = 0`.
    pub fn tasep(a: f64, b: f64) -> Result<Self> {
        Self::new(a, b, 0.0, 0.0, 0.0)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.a, self.b, self.c, self.d].iter().all(|v| v.is_finite());
        if !finite || self.a < 0.0 || self.b < 0.0 {
            return Err(AsepError::Domain(format!("a, b must be finite and >= 0: {self:?}")));
        }
        if !(self.c > -1.0 && self.c <= 0.0 && self.d > -1.0 && self.d <= 0.0) {
            return Err(AsepError::Domain(format!("c, d must lie in (-1, 0]: {self:?}")));
        }
        check_q(self.q)
    }

    /// Validates and additionally requires `a*b < 1`.
    pub fn require_fan(&self) -> Result<()> {
        self.validate()?;
        let ab = self.a * self.b;
        if ab >= 1.0 {
            return Err(AsepError::OutsideFan { ab });
        }
        Ok(())
    }

    /// Inverse of [`BoundaryRates::to_fan`].
    ///
    /// From the product and sum of the roots, `a c = −γ/α` and
    /// `(1 + a)(1 + c) = (1 − q)/α`.
    pub fn from_fan(&self) -> Result<BoundaryRates> {
        self.validate()?;
        let one_q = 1.0 - self.q;
        let alpha = one_q / ((1.0 + self.a) * (1.0 + self.c));
        let gamma = -alpha * self.a * self.c + 0.0;
        let beta = one_q / ((1.0 + self.b) * (1.0 + self.d));
        let delta = -beta * self.b * self.d + 0.0;
        BoundaryRates::new(alpha, beta, gamma, delta, self.q)
    }

    /// Phase and region; points exactly on `a = 1`, `b = 1`, `a = b` (off the
    /// maximal-current quadrant) or `ab = 1` get the boundary variants.
    pub fn classify(&self) -> PhaseInfo {
        let (a, b) = (self.a, self.b);
        let phase = if a < 1.0 && b < 1.0 {
            Phase::MaximalCurrent
        } else if b > 1.0 && b > a {
            Phase::HighDensity
        } else if a > 1.0 && a > b {
            Phase::LowDensity
        } else {
            Phase::PhaseBoundary
        };
        let ab = a * b;
        let region = if ab < 1.0 {
            Region::Fan
        } else if ab > 1.0 {
            Region::Shock
        } else {
            Region::RegionBoundary
        };
        PhaseInfo { phase, region }
    }

    /// `(1/(1+a), b/(1+b))`: densities felt near the left and right ends.
    pub fn effective_densities(&self) -> (f64, f64) {
        (1.0 / (1.0 + self.a), self.b / (1.0 + self.b))
    }

    /// The TASEP companion `(a, b, 0, 0, 0)`.
    pub fn tasep_companion(&self) -> FanParams {
        FanParams { a: self.a, b: self.b, c: 0.0, d: 0.0, q: 0.0 }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    const GOLDEN: f64 = 1.618_033_988_749_895;

    #[test]
    fn phi_examples() {
        assert_eq!(phi(0.5, 0.0, 0.0, Root::Plus).unwrap(), 1.0);
        assert_eq!(phi(0.5, 0.0, 0.0, Root::Minus).unwrap(), 0.0);
        assert_relative_eq!(phi(1.0, 1.0, 0.0, Root::Plus).unwrap(), GOLDEN, epsilon = 1e-15);
    }

    #[test]
    fn phi_domain_errors() {
        assert!(phi(0.0, 1.0, 0.0, Root::Plus).is_err());
        assert!(phi(1.0, -0.1, 0.0, Root::Plus).is_err());
        assert!(phi(1.0, 0.1, 1.0, Root::Minus).is_err());
        assert!(phi(1.0, 0.1, -0.1, Root::Minus).is_err());
    }

    #[test]
    fn to_fan_examples() {
        let p = BoundaryRates::tasep(1.0, 1.0).unwrap().to_fan().unwrap();
        assert_eq!((p.a, p.b, p.c, p.d, p.q), (0.0, 0.0, 0.0, 0.0, 0.0));

        let p = BoundaryRates::tasep(0.5, 0.25).unwrap().to_fan().unwrap();
        assert_eq!((p.a, p.b, p.c, p.d), (1.0, 3.0, 0.0, 0.0));

        let p = BoundaryRates::new(1.0, 1.0, 1.0, 1.0, 0.0).unwrap().to_fan().unwrap();
        let conj = 1.0 - GOLDEN;
        assert_relative_eq!(p.a, GOLDEN, epsilon = 1e-15);
        assert_relative_eq!(p.b, GOLDEN, epsilon = 1e-15);
        assert_relative_eq!(p.c, conj, epsilon = 1e-15);
        assert_relative_eq!(p.d, conj, epsilon = 1e-15);
    }

    #[test]
    fn from_fan_examples() {
        let r = FanParams::tasep(0.0, 0.0).unwrap().from_fan().unwrap();
        assert_eq!((r.alpha, r.beta, r.gamma, r.delta), (1.0, 1.0, 0.0, 0.0));

        let r = FanParams::tasep(1.0, 3.0).unwrap().from_fan().unwrap();
        assert_eq!((r.alpha, r.beta, r.gamma, r.delta), (0.5, 0.25, 0.0, 0.0));

        let p = FanParams::new(0.5, 0.5, -0.3, -0.2, 0.4).unwrap();
        let back = p.from_fan().unwrap().to_fan().unwrap();
        for (x, y) in [(p.a, back.a), (p.b, back.b), (p.c, back.c), (p.d, back.d)] {
            assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0), "{x} vs {y}");
        }
    }

    #[test]
    fn classify_examples() {
        let info = FanParams::tasep(0.5, 0.5).unwrap().classify();
        assert_eq!(info, PhaseInfo { phase: Phase::MaximalCurrent, region: Region::Fan });
        let info = FanParams::tasep(2.0, 0.3).unwrap().classify();
        assert_eq!(info, PhaseInfo { phase: Phase::LowDensity, region: Region::Fan });
        let info = FanParams::tasep(2.0, 2.0).unwrap().classify();
        assert_eq!(info, PhaseInfo { phase: Phase::PhaseBoundary, region: Region::Shock });
        let info = FanParams::tasep(0.2, 3.0).unwrap().classify();
        assert_eq!(info.phase, Phase::HighDensity);
        let info = FanParams::tasep(1.0, 0.5).unwrap().classify();
        assert_eq!(info.phase, Phase::PhaseBoundary);
        let info = FanParams::tasep(0.5, 2.0).unwrap().classify();
        assert_eq!(info.region, Region::RegionBoundary);
    }

    #[test]
    fn effective_density_examples() {
        assert_eq!(FanParams::tasep(0.0, 0.0).unwrap().effective_densities(), (1.0, 0.0));
        assert_eq!(FanParams::tasep(1.0, 1.0).unwrap().effective_densities(), (0.5, 0.5));
        let (l, r) = FanParams::tasep(3.0, 0.25).unwrap().effective_densities();
        assert_relative_eq!(l, 0.25);
        assert_relative_eq!(r, 0.2);
    }

    #[test]
    fn require_fan_rejects_shock() {
        assert!(matches!(
            FanParams::tasep(2.0, 2.0).unwrap().require_fan(),
            Err(AsepError::OutsideFan { .. })
        ));
        assert!(FanParams::new(0.1, 0.1, -1.0, 0.0, 0.0).is_err());
    }

    proptest! {
        #[test]
        fn vieta_identities(x in 1e-3f64..10.0, y in 0.0f64..10.0, q in 0.0f64..0.99) {
            let p = phi(x, y, q, Root::Plus).unwrap();
            let m = phi(x, y, q, Root::Minus).unwrap();
            prop_assert!(p >= 0.0);
            prop_assert!(m > -1.0 && m <= 0.0);
            let scale = 1.0 + (y / x).abs() + ((1.0 - q - x + y) / x).abs();
            prop_assert!((p * m + y / x).abs() <= 1e-12 * scale);
            prop_assert!((p + m - (1.0 - q - x + y) / x).abs() <= 1e-12 * scale);
        }

        #[test]
        fn rates_round_trip(alpha in 1e-2f64..5.0, beta in 1e-2f64..5.0,
                            gamma in 0.0f64..5.0, delta in 0.0f64..5.0, q in 0.0f64..0.95) {
            let r = BoundaryRates::new(alpha, beta, gamma, delta, q).unwrap();
            let back = r.to_fan().unwrap().from_fan().unwrap();
            for (x, y) in [(r.alpha, back.alpha), (r.beta, back.beta),
                           (r.gamma, back.gamma), (r.delta, back.delta)] {
                prop_assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0), "{} vs {}", x, y);
            }
        }

        #[test]
        fn fan_round_trip(a in 0.0f64..5.0, b in 0.0f64..5.0, c in -0.99f64..=0.0,
                          d in -0.99f64..=0.0, q in 0.0f64..0.95) {
            let p = FanParams::new(a, b, c, d, q).unwrap();
            let back = p.from_fan().unwrap().to_fan().unwrap();
            for (x, y) in [(p.a, back.a), (p.b, back.b), (p.c, back.c), (p.d, back.d)] {
                prop_assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0), "{} vs {}", x, y);
            }
        }

        #[test]
        fn classify_stable_under_tiny_noise(a in 0.0f64..3.0, b in 0.0f64..3.0, eps in -1e-14f64..1e-14) {
            let near = |x: f64, y: f64| (x - y).abs() < 1e-10;
            prop_assume!(!near(a, 1.0) && !near(b, 1.0) && !near(a, b) && !near(a * b, 1.0));
            let p = FanParams::tasep(a, b).unwrap().classify();
            let q = FanParams::tasep((a + eps).max(0.0), b).unwrap().classify();
            prop_assert_eq!(p, q);
        }
    }
}
