use dpmpc_core::dealer::{combine, CorrelationSource, Dealer};
use dpmpc_core::mpc::{reconstruct, share};
use dpmpc_core::FixedPoint;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

const N: usize = 10_000;

fn chi2_p(counts: &[u64]) -> f64 {
    let total: u64 = counts.iter().sum();
    let expected = total as f64 / counts.len() as f64;
    let stat: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    1.0 - ChiSquared::new((counts.len() - 1) as f64).unwrap().cdf(stat)
}

#[test]
fn correlations_satisfy_their_relations() {
    let fp = FixedPoint::default();
    let m = fp.modulus;
    let mut streams = Dealer::new(17, 3, fp).streams();

    let t: Vec<_> = streams.iter_mut().map(|s| s.next_triples(N).unwrap()).collect();
    let a = combine(&m, &t.iter().map(|b| b.a.as_slice()).collect::<Vec<_>>());
    let b = combine(&m, &t.iter().map(|b| b.b.as_slice()).collect::<Vec<_>>());
    let c = combine(&m, &t.iter().map(|b| b.c.as_slice()).collect::<Vec<_>>());
    assert!((0..N).all(|i| m.mul(a[i], b[i]) == c[i]));

    let q = fp.f();
    let tp: Vec<_> = streams.iter_mut().map(|s| s.next_trunc_pairs(q, N).unwrap()).collect();
    let r = combine(&m, &tp.iter().map(|b| b.r.as_slice()).collect::<Vec<_>>());
    let hi = combine(&m, &tp.iter().map(|b| b.r_hi.as_slice()).collect::<Vec<_>>());
    let bound = 1u128 << (fp.k() + fp.params.kappa);
    for i in 0..N {
        assert!(r[i].0 < bound);
        assert_eq!(hi[i].0, r[i].0 >> q);
    }

    let nbits = 12;
    let sb: Vec<_> = streams.iter_mut().map(|s| s.next_shared_bits(nbits, N).unwrap()).collect();
    let r = combine(&m, &sb.iter().map(|b| b.r.as_slice()).collect::<Vec<_>>());
    let hi = combine(&m, &sb.iter().map(|b| b.r_hi.as_slice()).collect::<Vec<_>>());
    for i in 0..N {
        let mut low = 0u128;
        for t in 0..nbits as usize {
            let bit = m.sum(sb.iter().map(|b| b.bits[t][i]));
            assert!(bit.0 <= 1);
            low |= bit.0 << t;
        }
        assert_eq!(r[i].0, low + (hi[i].0 << nbits));
    }

    let ip: Vec<_> = streams.iter_mut().map(|s| s.next_inverse_pairs(N).unwrap()).collect();
    let s = combine(&m, &ip.iter().map(|b| b.s.as_slice()).collect::<Vec<_>>());
    let s_inv = combine(&m, &ip.iter().map(|b| b.s_inv.as_slice()).collect::<Vec<_>>());
    assert!((0..N).all(|i| m.mul(s[i], s_inv[i]).0 == 1));
}

#[test]
fn triple_masks_look_uniform() {
    let fp = FixedPoint::default();
    let m = fp.modulus;
    let mut streams = Dealer::new(5, 3, fp).streams();
    let t: Vec<_> = streams.iter_mut().map(|s| s.next_triples(100_000).unwrap()).collect();
    let a = combine(&m, &t.iter().map(|b| b.a.as_slice()).collect::<Vec<_>>());
    let mut counts = [0u64; 16];
    for e in &a {
        // top four bits of a 127-bit residue
        counts[(e.0 >> 123) as usize] += 1;
    }
    let p = chi2_p(&counts);
    assert!(p > 0.001, "p = {p}, counts = {counts:?}");

    // a single party's share of a fixed secret is uniform as well
    let mut counts = [0u64; 16];
    for b in &t[1].b {
        counts[(b.0 >> 123) as usize] += 1;
    }
    assert!(chi2_p(&counts) > 0.001);
}

#[test]
fn shares_of_a_constant_are_uniform() {
    let fp = FixedPoint::default();
    let m = fp.modulus;
    let mut rng = ChaCha20Rng::seed_from_u64(3);
    let secret = vec![fp.encode(1.5).unwrap(); 50_000];
    let shares = share(&m, &secret, 3, 50_000, 1, &mut rng);
    assert_eq!(reconstruct(&m, &shares, 3).unwrap(), secret);
    for sv in &shares {
        let mut counts = [0u64; 16];
        for e in &sv.values {
            counts[(e.0 >> 123) as usize] += 1;
        }
        assert!(chi2_p(&counts) > 0.001, "{counts:?}");
    }
}
