mod common;

use common::*;
use dpmpc_core::dp::{
    audit_round_trip, check_guard, distributed_gaussian, parallel_compose, sequential_compose, sigma_for, DpError,
    NoiseSpec, PrivacyBudget,
};
use dpmpc_core::FixedPoint;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};

/// `(epsilon, delta)` pairs that pass the guard.
fn guarded() -> impl Strategy<Value = (f64, f64)> {
    (-9.0f64..-2.0).prop_flat_map(|ld| {
        let delta = 10f64.powf(ld);
        let bound = 2.0 * (1.0 / delta).ln();
        (0.01f64..bound).prop_map(move |eps| (eps, delta))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn sigma_is_monotone((eps, delta) in guarded(), t in 1u64..10_000, c in 0.1f64..10.0) {
        let s = sigma_for(eps, delta, t, c).unwrap();
        prop_assert!(sigma_for(eps, delta, t + 1, c).unwrap() > s);
        prop_assert!(sigma_for(eps, delta, t, c * 1.5).unwrap() > s);
        if check_guard(eps * 0.9, delta).is_ok() {
            prop_assert!(sigma_for(eps * 0.9, delta, t, c).unwrap() > s);
        }
        prop_assert!(sigma_for(eps, delta / 2.0, t, c).unwrap() > s);
        // linear in the clipping bound
        let ratio = sigma_for(eps, delta, t, 2.0 * c).unwrap() / s;
        prop_assert!((ratio - 2.0).abs() < 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]

    #[test]
    fn round_trip_stays_within_budget((eps, delta) in guarded(), t in 1u64..2000, c in 0.1f64..10.0) {
        let rt = audit_round_trip(eps, delta, t, c).unwrap();
        prop_assert!(rt.epsilon_prime <= eps * (1.0 + 1e-9), "{} > {}", rt.epsilon_prime, eps);
        prop_assert!(rt.lambda > 1.0);
    }
}

#[test]
fn guard_boundary() {
    let delta = 1e-5;
    let bound = 2.0 * (1.0f64 / delta).ln();
    assert!(check_guard(bound, delta).is_ok());
    assert!(matches!(check_guard(bound * 1.0001, delta), Err(DpError::Guard { .. })));
    assert!(check_guard(0.0, delta).is_err());
    assert!(check_guard(1.0, 0.0).is_err());
    assert!(check_guard(1.0, 1.0).is_err());
    assert!(sigma_for(1.0, delta, 0, 1.0).is_err());
}

#[test]
fn composition_rules() {
    let a = PrivacyBudget::new(0.25, 1e-6).unwrap();
    let b = PrivacyBudget::new(1.75, 4e-6).unwrap();
    let s = sequential_compose(&[a, b]);
    assert_eq!(s.epsilon, 2.0);
    assert!((s.delta - 5e-6).abs() < 1e-18);
    let p = parallel_compose(&[a, b]);
    assert_eq!((p.epsilon, p.delta), (1.75, 4e-6));
    assert_eq!(sequential_compose(&[]), PrivacyBudget { epsilon: 0.0, delta: 0.0 });
}

fn moments(xs: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let m2 = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let m3 = xs.iter().map(|x| (x - mean).powi(3)).sum::<f64>() / n;
    let m4 = xs.iter().map(|x| (x - mean).powi(4)).sum::<f64>() / n;
    (m2, m3 / m2.powf(1.5), m4 / (m2 * m2) - 3.0)
}

#[test]
fn summed_noise_moments() {
    let fp = FixedPoint::default();
    let spec = NoiseSpec { sigma: 2.0, dim: 100_000, parties: 3 };
    let out = run3(21, |p| distributed_gaussian(p, &spec));
    let z = open_real(&fp, &out);
    let (var, skew, kurt) = moments(&z);
    assert!((5.7..=6.3).contains(&var), "variance {var}");
    assert!(skew.abs() < 0.05, "skew {skew}");
    assert!(kurt.abs() < 0.1, "excess kurtosis {kurt}");
}

#[test]
fn zero_sigma_is_exactly_zero() {
    let fp = FixedPoint::default();
    let spec = NoiseSpec { sigma: 0.0, dim: 64, parties: 3 };
    let out = run3(22, |p| distributed_gaussian(p, &spec));
    assert!(open_signed(&fp, &out).iter().all(|&v| v == 0));
}

#[test]
fn mismatched_party_count_is_rejected() {
    let spec = NoiseSpec { sigma: 1.0, dim: 4, parties: 4 };
    let res = dpmpc_core::mpc::run_in_process(&dpmpc_core::mpc::SessionOptions::new(3, 1), |p| {
        distributed_gaussian(p, &spec)
    });
    assert!(res.is_err());
}

#[test]
fn draw_quantization_is_below_one_unit() {
    let fp = FixedPoint::default();
    let unit = 1.0 / fp.scale();
    let normal = Normal::new(0.0, NoiseSpec { sigma: 5.0, dim: 1, parties: 3 }.per_party_variance().sqrt()).unwrap();
    let mut rng = ChaCha20Rng::seed_from_u64(4);
    for _ in 0..10_000 {
        let x: f64 = normal.sample(&mut rng);
        let q = fp.decode(fp.encode(x).unwrap()).unwrap();
        assert!((q - x).abs() <= unit, "{x} -> {q}");
    }
}
