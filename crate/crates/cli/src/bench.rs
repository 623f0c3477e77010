//! Round and traffic measurements of single primitives across batch sizes.

use clap::ValueEnum;
use dpmpc_core::dp::{distributed_gaussian, NoiseSpec};
use dpmpc_core::invsqrt::inverse_sqrt;
use dpmpc_core::mpc::{run_in_process, MpcError, Party, SessionOptions, TruncMode};
use dpmpc_core::numeric::FixedPoint;
use dpmpc_core::train::clip_gradients;
use dpmpc_core::FieldElement;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::Serialize;

use crate::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Primitive {
    Mul,
    Trunc,
    TruncFloor,
    Comparison,
    BitDec,
    Mod2,
    Invsqrt,
    Clip,
    Shuffle,
    Noise,
}

/// Row width used for `clip` and `shuffle`.
pub const ROW_WIDTH: usize = 8;

#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct BenchRow {
    pub batch: usize,
    pub rounds: u64,
    pub bytes: u64,
}

#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct BenchReport {
    pub primitive: Primitive,
    pub parties: usize,
    pub rows: Vec<BenchRow>,
    pub rounds_constant: bool,
    /// Largest relative deviation of bytes-per-item from the smallest batch.
    pub max_byte_deviation: f64,
    pub bytes_linear: bool,
}

fn inputs(fp: &FixedPoint, primitive: Primitive, batch: usize, seed: u64) -> Vec<FieldElement> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let (k, f) = (fp.params.k, fp.params.f);
    let len = match primitive {
        Primitive::Mul | Primitive::Comparison => 2 * batch,
        Primitive::Clip | Primitive::Shuffle => batch * ROW_WIDTH,
        Primitive::Noise => 0,
        _ => batch,
    };
    (0..len)
        .map(|_| match primitive {
            Primitive::BitDec | Primitive::Mod2 => fp.from_raw(rng.random_range(0..1i128 << (k - 1))),
            Primitive::Invsqrt => fp.from_raw(rng.random_range(1i128 << (f - 10)..1i128 << (f + 20))),
            Primitive::Trunc | Primitive::TruncFloor | Primitive::Comparison => {
                fp.from_raw(rng.random_range(-(1i128 << (k - 3))..1i128 << (k - 3)))
            }
            Primitive::Clip => fp.from_raw(rng.random_range(-(4i128 << f)..4i128 << f)),
            _ => fp.from_raw(rng.random_range(-(1i128 << (f + 8))..1i128 << (f + 8))),
        })
        .collect()
}

fn exercise(p: &mut Party, primitive: Primitive, x: &[FieldElement], batch: usize) -> Result<(), MpcError> {
    let f = p.fp().params.f;
    let k = p.fp().params.k;
    match primitive {
        Primitive::Mul => {
            p.mul(&x[..batch], &x[batch..])?;
        }
        Primitive::Trunc => {
            p.trunc(x, f, TruncMode::NearestRandom)?;
        }
        Primitive::TruncFloor => {
            p.trunc(x, f, TruncMode::Floor)?;
        }
        Primitive::Comparison => {
            p.comparison(&x[..batch], &x[batch..])?;
        }
        Primitive::BitDec => {
            p.bit_dec(x, k - 1)?;
        }
        Primitive::Mod2 => {
            p.mod2(x)?;
        }
        Primitive::Invsqrt => {
            inverse_sqrt(p, x)?;
        }
        Primitive::Clip => {
            clip_gradients(p, x, ROW_WIDTH, 3.0).map_err(|e| MpcError::Domain(e.to_string()))?;
        }
        Primitive::Shuffle => {
            p.oblivious_shuffle(x, ROW_WIDTH)?;
        }
        Primitive::Noise => {
            let spec = NoiseSpec { sigma: 1.0, dim: batch, parties: p.parties() };
            distributed_gaussian(p, &spec)?;
        }
    }
    Ok(())
}

fn measure(opts: &SessionOptions, x: &[FieldElement], run: Option<(Primitive, usize)>) -> Result<(u64, u64), CliError> {
    let out = run_in_process(opts, |p| {
        let own = if p.id() == 0 { Some(x) } else { None };
        let shared = p.input(0, own, x.len())?;
        if let Some((primitive, batch)) = run {
            exercise(p, primitive, &shared, batch)?;
        }
        Ok(())
    })?;
    Ok((out.metrics.rounds, out.metrics.total_bytes()))
}

/// Runs `primitive` once per batch size; the cost of loading the inputs is
/// measured separately and subtracted.
pub fn bench(primitive: Primitive, batches: &[usize], parties: usize, seed: u64) -> Result<BenchReport, CliError> {
    if batches.is_empty() || batches.contains(&0) {
        return Err(CliError::Config("batch sizes must be positive".into()));
    }
    let opts = SessionOptions::new(parties, seed);
    let fp = opts.fp;
    let mut rows = Vec::new();
    for &b in batches {
        let x = inputs(&fp, primitive, b, seed ^ b as u64);
        let (r0, b0) = measure(&opts, &x, None)?;
        let (r1, b1) = measure(&opts, &x, Some((primitive, b)))?;
        rows.push(BenchRow { batch: b, rounds: r1 - r0, bytes: b1 - b0 });
    }
    let rounds_constant = rows.iter().all(|r| r.rounds == rows[0].rounds);
    let per_item = rows[0].bytes as f64 / rows[0].batch as f64;
    let max_byte_deviation = rows
        .iter()
        .map(|r| ((r.bytes as f64 / r.batch as f64) / per_item - 1.0).abs())
        .fold(0.0, f64::max);
    Ok(BenchReport {
        primitive,
        parties,
        rows,
        rounds_constant,
        max_byte_deviation,
        bytes_linear: max_byte_deviation <= 0.10,
    })
}

impl BenchReport {
    pub fn table(&self) -> String {
        let mut s = format!("{:>8} {:>8} {:>14} {:>12}\n", "batch", "rounds", "bytes", "bytes/item");
        for r in &self.rows {
            s += &format!("{:>8} {:>8} {:>14} {:>12.1}\n", r.batch, r.rounds, r.bytes, r.bytes as f64 / r.batch as f64);
        }
        s += &format!(
            "rounds constant: {}\nbytes linear (max deviation {:.2}%): {}\n",
            self.rounds_constant,
            100.0 * self.max_byte_deviation,
            self.bytes_linear
        );
        s
    }
}
