mod common;

use common::*;
use dpmpc_core::invsqrt::{inverse_sqrt, inverse_sqrt_detailed, inverse_sqrt_exact};
use dpmpc_core::FixedPoint;

#[test]
fn spot_values() {
    let fp = FixedPoint::default();
    let xs = [4.0, 2.0, 1.0, 6.0, 0.5, 0.3, 1e-3, 1e5];
    let enc = fp.encode_vec(&xs).unwrap();
    let out = run3(11, |p| {
        let x = input0(p, &enc)?;
        inverse_sqrt(p, &x)
    });
    let y = open_real(&fp, &out);
    for (x, y) in xs.iter().zip(&y) {
        let e = inverse_sqrt_exact(*x).unwrap();
        println!("{x} -> {y} (exact {e}, rel {})", y / e - 1.0);
        assert!(*y < e);
        assert!(*y > e * 0.985);
    }
}

#[test]
fn batch_timing() {
    let fp = FixedPoint::default();
    let xs: Vec<f64> = (1..=10_000).map(|i| i as f64 * 0.37).collect();
    let enc = fp.encode_vec(&xs).unwrap();
    let t = std::time::Instant::now();
    let out = run3(12, |p| {
        let x = input0(p, &enc)?;
        inverse_sqrt_detailed(p, &x).map(|d| d.output)
    });
    println!("10k invsqrt in {:?}", t.elapsed());
    let y = open_real(&fp, &out);
    for (x, y) in xs.iter().zip(&y) {
        let e = inverse_sqrt_exact(*x).unwrap();
        assert!(*y < e && *y > e * 0.985, "{x}: {y} vs {e}");
    }
}
