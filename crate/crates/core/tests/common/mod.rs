#![allow(dead_code)]

use dpmpc_core::mpc::{run_in_process, MpcError, Party, SessionOptions};
use dpmpc_core::{FieldElement, FixedPoint};

/// Runs `f` on a three-party session and returns every party's output.
pub fn run3<R, F>(seed: u64, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(&mut Party) -> Result<R, MpcError> + Sync,
{
    run_in_process(&SessionOptions::new(3, seed), f).expect("session failed").results
}

pub fn run_with<R, F>(opts: &SessionOptions, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(&mut Party) -> Result<R, MpcError> + Sync,
{
    run_in_process(opts, f).expect("session failed").results
}

/// Element-wise sum of every party's shares.
pub fn open(fp: &FixedPoint, shares: &[Vec<FieldElement>]) -> Vec<FieldElement> {
    let n = shares[0].len();
    (0..n).map(|i| fp.modulus.sum(shares.iter().map(|s| s[i]))).collect()
}

pub fn open_signed(fp: &FixedPoint, shares: &[Vec<FieldElement>]) -> Vec<i128> {
    open(fp, shares).into_iter().map(|e| fp.modulus.lift(e)).collect()
}

pub fn open_real(fp: &FixedPoint, shares: &[Vec<FieldElement>]) -> Vec<f64> {
    open(fp, shares).into_iter().map(|e| fp.decode(e).expect("decodable")).collect()
}

/// Party 0 inputs `values`; everyone gets shares.
pub fn input0(p: &mut Party, values: &[FieldElement]) -> Result<Vec<FieldElement>, MpcError> {
    let own = if p.id() == 0 { Some(values) } else { None };
    p.input(0, own, values.len())
}

pub fn raw(fp: &FixedPoint, v: &[i128]) -> Vec<FieldElement> {
    v.iter().map(|&x| fp.from_raw(x)).collect()
}
