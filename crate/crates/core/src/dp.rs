//! Privacy accounting and distributed Gaussian noise.
//!
//! Accounting follows the Gaussian-mechanism RDP chain: each DPSGD step with
//! clipping bound `C` and noise `sigma` is `(lambda, lambda C^2 / (2 sigma^2))`-RDP,
//! steps compose additively, and the total converts to `(epsilon, delta)` via
//! `epsilon = gamma + ln(1/delta) / (lambda - 1)`. At
//! `lambda = 1 + 2 ln(1/delta) / epsilon` this yields
//! `sigma >= 2 C sqrt(T ln(1/delta)) / epsilon`, valid for
//! `epsilon <= 2 ln(1/delta)`. All logarithms are natural.

use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::mpc::{MpcError, Party};
use crate::numeric::FieldElement;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DpError {
    #[error(
        "accounting guard violated: epsilon = {epsilon} exceeds 2 ln(1/delta) = {bound} (the Gaussian DPSGD bound needs epsilon <= 2 ln(1/delta))"
    )]
    Guard { epsilon: f64, delta: f64, bound: f64 },
    #[error("invalid privacy parameter: {0}")]
    Domain(String),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PrivacyBudget {
    pub epsilon: f64,
    pub delta: f64,
}

impl PrivacyBudget {
    /// `epsilon >= 0`, `0 < delta < 1`.
    pub fn new(epsilon: f64, delta: f64) -> Result<Self, DpError> {
        if !(epsilon >= 0.0) || !epsilon.is_finite() {
            return Err(DpError::Domain(format!("epsilon must be finite and non-negative, got {epsilon}")));
        }
        if !(delta > 0.0 && delta < 1.0) {
            return Err(DpError::Domain(format!("delta must lie in (0, 1), got {delta}")));
        }
        Ok(PrivacyBudget { epsilon, delta })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RdpPoint {
    pub lambda: f64,
    pub gamma: f64,
}

impl RdpPoint {
    pub fn new(lambda: f64, gamma: f64) -> Result<Self, DpError> {
        if !(lambda > 1.0) {
            return Err(DpError::Domain(format!("RDP order must exceed 1, got {lambda}")));
        }
        if !(gamma >= 0.0) {
            return Err(DpError::Domain(format!("RDP divergence must be non-negative, got {gamma}")));
        }
        Ok(RdpPoint { lambda, gamma })
    }
}

/// Rejects `epsilon > 2 ln(1/delta)`.
pub fn check_guard(epsilon: f64, delta: f64) -> Result<(), DpError> {
    PrivacyBudget::new(epsilon, delta)?;
    if epsilon <= 0.0 {
        return Err(DpError::Domain("epsilon must be positive to calibrate noise".into()));
    }
    let bound = 2.0 * (1.0 / delta).ln();
    if epsilon > bound {
        return Err(DpError::Guard { epsilon, delta, bound });
    }
    Ok(())
}

/// `C * 2 sqrt(T ln(1/delta)) / epsilon`.
pub fn sigma_for(epsilon: f64, delta: f64, t: u64, c: f64) -> Result<f64, DpError> {
    check_guard(epsilon, delta)?;
    if t == 0 {
        return Err(DpError::Domain("iteration count must be at least 1".into()));
    }
    if !(c > 0.0) || !c.is_finite() {
        return Err(DpError::Domain(format!("clipping bound must be positive, got {c}")));
    }
    Ok(c * 2.0 * (t as f64 * (1.0 / delta).ln()).sqrt() / epsilon)
}

pub fn rdp_gaussian(lambda: f64, c: f64, sigma: f64) -> Result<RdpPoint, DpError> {
    if !(sigma > 0.0) {
        return Err(DpError::Domain(format!("sigma must be positive, got {sigma}")));
    }
    RdpPoint::new(lambda, lambda * c * c / (2.0 * sigma * sigma))
}

/// Sums divergences of points at a common order `lambda`.
pub fn rdp_compose(lambda: f64, points: &[RdpPoint]) -> Result<RdpPoint, DpError> {
    let mut gamma = 0.0;
    for p in points {
        if p.lambda != lambda {
            return Err(DpError::Domain(format!("cannot compose order {} with order {lambda}", p.lambda)));
        }
        gamma += p.gamma;
    }
    RdpPoint::new(lambda, gamma)
}

pub fn rdp_to_dp(point: RdpPoint, delta: f64) -> Result<PrivacyBudget, DpError> {
    RdpPoint::new(point.lambda, point.gamma)?;
    if !(delta > 0.0 && delta < 1.0) {
        return Err(DpError::Domain(format!("delta must lie in (0, 1), got {delta}")));
    }
    PrivacyBudget::new(point.gamma + (1.0 / delta).ln() / (point.lambda - 1.0), delta)
}

/// The order `1 + 2 ln(1/delta) / epsilon` used to derive [`sigma_for`].
pub fn proof_lambda(epsilon: f64, delta: f64) -> f64 {
    1.0 + 2.0 * (1.0 / delta).ln() / epsilon
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RoundTrip {
    pub sigma: f64,
    pub lambda: f64,
    pub gamma_total: f64,
    pub epsilon_prime: f64,
}

/// Calibrates `sigma` and converts it back to `(epsilon', delta)`; sound
/// calibration gives `epsilon' <= epsilon`.
pub fn audit_round_trip(epsilon: f64, delta: f64, t: u64, c: f64) -> Result<RoundTrip, DpError> {
    let sigma = sigma_for(epsilon, delta, t, c)?;
    let lambda = proof_lambda(epsilon, delta);
    let step = rdp_gaussian(lambda, c, sigma)?;
    let total = rdp_compose(lambda, &vec![step; t as usize])?;
    let back = rdp_to_dp(total, delta)?;
    Ok(RoundTrip { sigma, lambda, gamma_total: total.gamma, epsilon_prime: back.epsilon })
}

/// Component-wise sums; the empty composition is `(0, 0)`.
pub fn sequential_compose(budgets: &[PrivacyBudget]) -> PrivacyBudget {
    PrivacyBudget {
        epsilon: budgets.iter().map(|b| b.epsilon).sum(),
        delta: budgets.iter().map(|b| b.delta).sum(),
    }
}

/// Component-wise maxima over mechanisms on disjoint data.
pub fn parallel_compose(budgets: &[PrivacyBudget]) -> PrivacyBudget {
    PrivacyBudget {
        epsilon: budgets.iter().map(|b| b.epsilon).fold(0.0, f64::max),
        delta: budgets.iter().map(|b| b.delta).fold(0.0, f64::max),
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoiseSpec {
    pub sigma: f64,
    pub dim: usize,
    pub parties: usize,
}

impl NoiseSpec {
    /// Each party's variance `3 sigma^2 / (2m)`; the sum has `1.5 sigma^2`.
    pub fn per_party_variance(&self) -> f64 {
        3.0 * self.sigma * self.sigma / (2.0 * self.parties as f64)
    }
}

/// Every party samples `dim` draws from `N(0, 3 sigma^2 / (2m))`, encodes and
/// shares them; the sum of all contributions is returned (one round).
pub fn distributed_gaussian(party: &mut Party, spec: &NoiseSpec) -> Result<Vec<FieldElement>, MpcError> {
    if spec.parties != party.parties() {
        return Err(MpcError::Shape(format!("noise spec for {} parties in a {}-party session", spec.parties, party.parties())));
    }
    if !(spec.sigma >= 0.0) || !spec.sigma.is_finite() {
        return Err(MpcError::Domain(format!("sigma must be finite and non-negative, got {}", spec.sigma)));
    }
    let normal = Normal::new(0.0, spec.per_party_variance().sqrt())
        .map_err(|e| MpcError::Domain(format!("noise distribution: {e}")))?;
    let fp = *party.fp();
    let mut mine = Vec::with_capacity(spec.dim);
    for _ in 0..spec.dim {
        let draw: f64 = normal.sample(party.rng());
        mine.push(fp.encode(draw)?);
    }
    let lens = vec![spec.dim; party.parties()];
    let parts = party.input_all(&mine, &lens)?;
    let m = fp.modulus;
    Ok((0..spec.dim).map(|i| m.sum(parts.iter().map(|p| p[i]))).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigma_closed_form() {
        let s = sigma_for(2.0, 1e-5, 100, 3.0).unwrap();
        assert!((s - 101.7921).abs() < 1e-3, "{s}");
        let s1 = sigma_for(2.0, 1e-5, 100, 1.0).unwrap();
        assert!((s1 * 3.0 - s).abs() < 1e-12);
        assert!(matches!(sigma_for(30.0, 1e-5, 100, 3.0), Err(DpError::Guard { .. })));
        assert!(sigma_for(1.0, 1e-5, 0, 3.0).is_err());
    }

    #[test]
    fn rdp_examples() {
        assert_eq!(rdp_gaussian(2.0, 1.0, 1.0).unwrap().gamma, 1.0);
        let g1 = rdp_gaussian(3.0, 1.0, 1.0).unwrap().gamma;
        let g2 = rdp_gaussian(3.0, 1.0, 2.0).unwrap().gamma;
        assert!((g1 / 4.0 - g2).abs() < 1e-15);
        let g = rdp_gaussian(21.0, 3.0, 101.792).unwrap().gamma;
        assert!((g - 0.009120).abs() < 1e-6, "{g}");
        let c = rdp_compose(2.0, &[RdpPoint::new(2.0, 0.1).unwrap(), RdpPoint::new(2.0, 0.25).unwrap()]).unwrap();
        assert!((c.gamma - 0.35).abs() < 1e-15);
        assert_eq!(rdp_compose(2.0, &[]).unwrap().gamma, 0.0);
        assert!(rdp_compose(2.0, &[RdpPoint::new(3.0, 0.1).unwrap()]).is_err());
        let e = rdp_to_dp(RdpPoint::new(21.0, 0.05).unwrap(), 1e-5).unwrap().epsilon;
        assert!((e - 0.62565).abs() < 1e-4, "{e}");
        let tiny = rdp_to_dp(RdpPoint::new(1e6, 0.0).unwrap(), 1e-5).unwrap().epsilon;
        assert!(tiny > 0.0 && tiny < 1e-4);
    }

    #[test]
    fn compositions() {
        let a = PrivacyBudget::new(0.25, 1e-6).unwrap();
        let b = PrivacyBudget::new(1.75, 9e-6).unwrap();
        let s = sequential_compose(&[a, b]);
        assert!((s.epsilon - 2.0).abs() < 1e-15 && (s.delta - 1e-5).abs() < 1e-18);
        assert_eq!(sequential_compose(&[a]), a);
        assert_eq!(sequential_compose(&[]), PrivacyBudget { epsilon: 0.0, delta: 0.0 });
        let p = parallel_compose(&[PrivacyBudget::new(1.0, 1e-5).unwrap(), PrivacyBudget::new(2.0, 1e-6).unwrap()]);
        assert_eq!(p, PrivacyBudget { epsilon: 2.0, delta: 1e-5 });
        assert_eq!(parallel_compose(&[a, a, a]), a);
    }

    #[test]
    fn noise_variance_formula() {
        let spec = NoiseSpec { sigma: 2.0, dim: 1, parties: 3 };
        assert_eq!(spec.per_party_variance(), 2.0);
    }
}
