//! Online primitives over additive secret sharing.
//!
//! Every party runs the same program on its own [`Party`] handle; values are
//! plain `Vec<FieldElement>` share vectors and every primitive is batched
//! element-wise, so a call costs the same number of rounds whatever its
//! length.

mod bits;
mod premul;
pub mod session;
mod shuffle;
pub mod tap;

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use thiserror::Error;

use crate::dealer::{ConsumptionGuard, CorrelationSource, DealerError};
use crate::numeric::{FieldElement, FixedPoint, Modulus, NumericError};
use crate::transport::{decode_elements, encode_elements, ChannelMetrics, PartyId, Transport, TransportError};

pub use session::{run_in_process, SessionOptions, SessionOutput};
pub use shuffle::shuffle_subsets;
pub use tap::{DebugTap, TruncEvent};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MpcError {
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error(transparent)]
    Dealer(#[from] DealerError),
    #[error(transparent)]
    Numeric(#[from] NumericError),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("party {0} panicked")]
    Panic(PartyId),
}

/// Why a value was opened. Every opening is tallied so that tests can assert
/// that no model coordinate is ever revealed during training.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum OpenPurpose {
    BeaverMask,
    MaskedTruncation,
    MaskedDecomposition,
    PrefixMask,
    Accuracy,
    Output,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TruncMode {
    /// Exact signed floor.
    Floor,
    /// `floor(x / 2^q) + u`, `u` in {0, 1} with `P(u = 1)` equal to the dropped fraction.
    NearestRandom,
}

/// One party's additive shares of a secret matrix.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ShareVector {
    pub party: PartyId,
    pub values: Vec<FieldElement>,
    pub rows: usize,
    pub cols: usize,
}

/// Splits `secret` into `m` share vectors: `m - 1` uniform, one remainder.
pub fn share<R: Rng + ?Sized>(
    modulus: &Modulus,
    secret: &[FieldElement],
    m: usize,
    rows: usize,
    cols: usize,
    rng: &mut R,
) -> Vec<ShareVector> {
    assert_eq!(rows * cols, secret.len(), "shape does not match secret length");
    let mut last = secret.to_vec();
    let mut out = Vec::with_capacity(m);
    for party in 0..m - 1 {
        let values: Vec<_> = (0..secret.len()).map(|_| modulus.random(rng)).collect();
        for (l, v) in last.iter_mut().zip(&values) {
            *l = modulus.sub(*l, *v);
        }
        out.push(ShareVector { party, values, rows, cols });
    }
    out.push(ShareVector { party: m - 1, values: last, rows, cols });
    out
}

/// Sums a complete set of `m` share vectors.
pub fn reconstruct(modulus: &Modulus, shares: &[ShareVector], m: usize) -> Result<Vec<FieldElement>, MpcError> {
    if shares.len() != m {
        return Err(MpcError::Shape(format!("expected {m} shares, got {}", shares.len())));
    }
    let mut seen = vec![false; m];
    for s in shares {
        if s.party >= m || std::mem::replace(&mut seen[s.party], true) {
            return Err(MpcError::Shape(format!("duplicate or invalid party {}", s.party)));
        }
    }
    let first = &shares[0];
    if shares
        .iter()
        .any(|s| s.rows != first.rows || s.cols != first.cols || s.values.len() != first.values.len())
    {
        return Err(MpcError::Shape("share vectors disagree on shape".into()));
    }
    Ok((0..first.values.len()).map(|i| modulus.sum(shares.iter().map(|s| s.values[i]))).collect())
}

fn check_len(a: &[FieldElement], b: &[FieldElement]) -> Result<(), MpcError> {
    if a.len() != b.len() {
        return Err(MpcError::Shape(format!("lengths {} and {}", a.len(), b.len())));
    }
    Ok(())
}

/// One party's handle on a session.
pub struct Party {
    id: PartyId,
    parties: usize,
    fp: FixedPoint,
    transport: Box<dyn Transport>,
    source: Box<dyn CorrelationSource>,
    guard: ConsumptionGuard,
    rng: ChaCha20Rng,
    audit: BTreeMap<OpenPurpose, u64>,
    tap: Option<Arc<DebugTap>>,
    tap_seq: u64,
}

impl Party {
    pub fn new(
        transport: Box<dyn Transport>,
        source: Box<dyn CorrelationSource>,
        fp: FixedPoint,
        rng_seed: [u8; 32],
    ) -> Self {
        Party {
            id: transport.party(),
            parties: transport.parties(),
            fp,
            transport,
            source,
            guard: ConsumptionGuard::default(),
            rng: ChaCha20Rng::from_seed(rng_seed),
            audit: BTreeMap::new(),
            tap: None,
            tap_seq: 0,
        }
    }

    pub fn with_tap(mut self, tap: Option<Arc<DebugTap>>) -> Self {
        self.tap = tap;
        self
    }

    pub fn id(&self) -> PartyId {
        self.id
    }

    pub fn parties(&self) -> usize {
        self.parties
    }

    pub fn fp(&self) -> &FixedPoint {
        &self.fp
    }

    pub fn modulus(&self) -> Modulus {
        self.fp.modulus
    }

    /// Private randomness of this party.
    pub fn rng(&mut self) -> &mut ChaCha20Rng {
        &mut self.rng
    }

    pub fn metrics(&self) -> ChannelMetrics {
        self.transport.metrics_snapshot()
    }

    /// Number of openings per purpose so far.
    pub fn audit(&self) -> &BTreeMap<OpenPurpose, u64> {
        &self.audit
    }

    pub fn has_tap(&self) -> bool {
        self.tap.is_some()
    }

    /// Hands this party's shares of `values` to the debug tap, if attached.
    pub fn observe(&mut self, label: &str, meta: u64, values: &[FieldElement]) {
        if let Some(tap) = &self.tap {
            tap.deposit(label, self.tap_seq, meta, self.id, values);
            self.tap_seq += 1;
        }
    }

    pub fn barrier(&mut self) -> Result<(), MpcError> {
        Ok(self.transport.round_barrier()?)
    }

    fn send_elems(&mut self, to: PartyId, values: &[FieldElement]) -> Result<(), MpcError> {
        Ok(self.transport.send(to, encode_elements(values))?)
    }

    fn recv_elems(&mut self, from: PartyId, expected: usize) -> Result<Vec<FieldElement>, MpcError> {
        let bytes = self.transport.receive(from)?;
        let v = decode_elements(&bytes)?;
        if v.len() != expected {
            return Err(MpcError::Shape(format!("peer {from} sent {} elements, expected {expected}", v.len())));
        }
        let p = self.fp.modulus.value();
        if v.iter().any(|e| e.0 >= p) {
            return Err(MpcError::Shape(format!("peer {from} sent a residue out of range")));
        }
        Ok(v)
    }

    fn peers(&self) -> impl Iterator<Item = PartyId> {
        let id = self.id;
        (0..self.parties).filter(move |&p| p != id)
    }

    /// Opens several vectors in one round.
    pub fn open_many(&mut self, xs: &[&[FieldElement]], purpose: OpenPurpose) -> Result<Vec<Vec<FieldElement>>, MpcError> {
        let flat: Vec<FieldElement> = xs.iter().flat_map(|x| x.iter().copied()).collect();
        let opened = self.open(&flat, purpose)?;
        let mut out = Vec::with_capacity(xs.len());
        let mut at = 0;
        for x in xs {
            out.push(opened[at..at + x.len()].to_vec());
            at += x.len();
        }
        Ok(out)
    }

    /// All-to-all opening followed by a round barrier.
    pub fn open(&mut self, x: &[FieldElement], purpose: OpenPurpose) -> Result<Vec<FieldElement>, MpcError> {
        *self.audit.entry(purpose).or_default() += 1;
        let peers: Vec<_> = self.peers().collect();
        for &p in &peers {
            self.send_elems(p, x)?;
        }
        let m = self.fp.modulus;
        let mut acc = x.to_vec();
        for &p in &peers {
            let theirs = self.recv_elems(p, x.len())?;
            for (a, b) in acc.iter_mut().zip(theirs) {
                *a = m.add(*a, b);
            }
        }
        self.barrier()?;
        Ok(acc)
    }

    /// Opens a final result to every party.
    pub fn reveal(&mut self, x: &[FieldElement]) -> Result<Vec<FieldElement>, MpcError> {
        self.open(x, OpenPurpose::Output)
    }

    /// `owner` secret-shares `values` (only the owner passes `Some`).
    pub fn input(&mut self, owner: PartyId, values: Option<&[FieldElement]>, len: usize) -> Result<Vec<FieldElement>, MpcError> {
        let out = if self.id == owner {
            let values = values.ok_or_else(|| MpcError::Shape("owner must supply its input".into()))?;
            if values.len() != len {
                return Err(MpcError::Shape(format!("input of length {} declared as {len}", values.len())));
            }
            let m = self.fp.modulus;
            let mut mine = values.to_vec();
            let peers: Vec<_> = self.peers().collect();
            for p in peers {
                let s: Vec<_> = (0..len).map(|_| m.random(&mut self.rng)).collect();
                for (a, b) in mine.iter_mut().zip(&s) {
                    *a = m.sub(*a, *b);
                }
                self.send_elems(p, &s)?;
            }
            mine
        } else {
            self.recv_elems(owner, len)?
        };
        self.barrier()?;
        Ok(out)
    }

    /// Every party shares its own vector in one round; `lens[j]` is party `j`'s
    /// public input length. Returns shares of each party's input.
    pub fn input_all(&mut self, mine: &[FieldElement], lens: &[usize]) -> Result<Vec<Vec<FieldElement>>, MpcError> {
        if lens.len() != self.parties || lens[self.id] != mine.len() {
            return Err(MpcError::Shape("input lengths disagree".into()));
        }
        let m = self.fp.modulus;
        let mut own = mine.to_vec();
        let peers: Vec<_> = self.peers().collect();
        for &p in &peers {
            let s: Vec<_> = (0..mine.len()).map(|_| m.random(&mut self.rng)).collect();
            for (a, b) in own.iter_mut().zip(&s) {
                *a = m.sub(*a, *b);
            }
            self.send_elems(p, &s)?;
        }
        let mut out = vec![Vec::new(); self.parties];
        for &p in &peers {
            out[p] = self.recv_elems(p, lens[p])?;
        }
        out[self.id] = own;
        self.barrier()?;
        Ok(out)
    }

    /// Shares of a public vector (party 0 holds it, everyone else zero).
    pub fn public(&self, c: &[FieldElement]) -> Vec<FieldElement> {
        if self.id == 0 {
            c.to_vec()
        } else {
            vec![FieldElement::ZERO; c.len()]
        }
    }

    pub fn public_const(&self, c: FieldElement, n: usize) -> Vec<FieldElement> {
        if self.id == 0 {
            vec![c; n]
        } else {
            vec![FieldElement::ZERO; n]
        }
    }

    pub fn add(&self, x: &[FieldElement], y: &[FieldElement]) -> Result<Vec<FieldElement>, MpcError> {
        check_len(x, y)?;
        let m = self.fp.modulus;
        Ok(x.iter().zip(y).map(|(a, b)| m.add(*a, *b)).collect())
    }

    pub fn sub(&self, x: &[FieldElement], y: &[FieldElement]) -> Result<Vec<FieldElement>, MpcError> {
        check_len(x, y)?;
        let m = self.fp.modulus;
        Ok(x.iter().zip(y).map(|(a, b)| m.sub(*a, *b)).collect())
    }

    pub fn neg(&self, x: &[FieldElement]) -> Vec<FieldElement> {
        let m = self.fp.modulus;
        x.iter().map(|a| m.neg(*a)).collect()
    }

    /// Adds a public vector; only party 0 adjusts its share.
    pub fn add_public(&self, x: &[FieldElement], c: &[FieldElement]) -> Result<Vec<FieldElement>, MpcError> {
        check_len(x, c)?;
        if self.id != 0 {
            return Ok(x.to_vec());
        }
        let m = self.fp.modulus;
        Ok(x.iter().zip(c).map(|(a, b)| m.add(*a, *b)).collect())
    }

    pub fn add_const(&self, x: &[FieldElement], c: FieldElement) -> Vec<FieldElement> {
        if self.id != 0 {
            return x.to_vec();
        }
        let m = self.fp.modulus;
        x.iter().map(|a| m.add(*a, c)).collect()
    }

    pub fn mul_public(&self, x: &[FieldElement], c: FieldElement) -> Vec<FieldElement> {
        let m = self.fp.modulus;
        x.iter().map(|a| m.mul(*a, c)).collect()
    }

    pub fn mul_public_vec(&self, x: &[FieldElement], c: &[FieldElement]) -> Result<Vec<FieldElement>, MpcError> {
        check_len(x, c)?;
        let m = self.fp.modulus;
        Ok(x.iter().zip(c).map(|(a, b)| m.mul(*a, *b)).collect())
    }

    /// Element-wise Beaver multiplication (one round).
    pub fn mul(&mut self, x: &[FieldElement], y: &[FieldElement]) -> Result<Vec<FieldElement>, MpcError> {
        check_len(x, y)?;
        if x.is_empty() {
            return Ok(Vec::new());
        }
        let t = self.source.next_triples(x.len())?;
        self.guard.claim(t.seq)?;
        let m = self.fp.modulus;
        let d: Vec<_> = x.iter().zip(&t.a).map(|(x, a)| m.sub(*x, *a)).collect();
        let e: Vec<_> = y.iter().zip(&t.b).map(|(y, b)| m.sub(*y, *b)).collect();
        let opened = self.open_many(&[&d, &e], OpenPurpose::BeaverMask)?;
        let (d, e) = (&opened[0], &opened[1]);
        let lead = self.id == 0;
        Ok((0..x.len())
            .map(|i| {
                let mut z = m.add(t.c[i], m.add(m.mul(d[i], t.b[i]), m.mul(e[i], t.a[i])));
                if lead {
                    z = m.add(z, m.mul(d[i], e[i]));
                }
                z
            })
            .collect())
    }

    /// Several independent products in one round.
    pub fn mul_many(&mut self, pairs: &[(&[FieldElement], &[FieldElement])]) -> Result<Vec<Vec<FieldElement>>, MpcError> {
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for (x, y) in pairs {
            check_len(x, y)?;
            xs.extend_from_slice(x);
            ys.extend_from_slice(y);
        }
        let z = self.mul(&xs, &ys)?;
        let mut out = Vec::with_capacity(pairs.len());
        let mut at = 0;
        for (x, _) in pairs {
            out.push(z[at..at + x.len()].to_vec());
            at += x.len();
        }
        Ok(out)
    }

    /// `trunc(x, k, q)` with `k` the session's magnitude bound.
    pub fn trunc(&mut self, x: &[FieldElement], q: u32, mode: TruncMode) -> Result<Vec<FieldElement>, MpcError> {
        let k = self.fp.params.k;
        self.trunc_bits(x, k, q, mode)
    }

    /// Divides by `2^q` for inputs whose signed lift lies in `[-2^(kb-1), 2^(kb-1))`.
    pub fn trunc_bits(&mut self, x: &[FieldElement], kb: u32, q: u32, mode: TruncMode) -> Result<Vec<FieldElement>, MpcError> {
        self.trunc_inner(x, kb, q, mode, true)
    }

    /// As [`Party::trunc_bits`]; `trace = false` keeps the call out of the
    /// tap's truncation trace (used by exact comparisons).
    pub(crate) fn trunc_inner(
        &mut self,
        x: &[FieldElement],
        kb: u32,
        q: u32,
        mode: TruncMode,
        trace: bool,
    ) -> Result<Vec<FieldElement>, MpcError> {
        if q == 0 || q >= kb || kb > self.fp.params.k {
            return Err(MpcError::Domain(format!("trunc shift {q} with bound {kb} (k = {})", self.fp.params.k)));
        }
        if x.is_empty() {
            return Ok(Vec::new());
        }
        let m = self.fp.modulus;
        let n = x.len();
        let lead = self.id == 0;
        let offset = FieldElement(1u128 << (kb - 1));
        let out_offset = FieldElement(1u128 << (kb - 1 - q));
        let (r, r_hi, low_bits) = match mode {
            TruncMode::NearestRandom => {
                let pair = self.source.next_trunc_pairs(q, n)?;
                self.guard.claim(pair.seq)?;
                (pair.r, pair.r_hi, None)
            }
            TruncMode::Floor => {
                let sb = self.source.next_shared_bits(q, n)?;
                self.guard.claim(sb.seq)?;
                (sb.r, sb.r_hi, Some(sb.bits))
            }
        };
        let mut masked: Vec<_> = x.iter().zip(&r).map(|(a, b)| m.add(*a, *b)).collect();
        if lead {
            masked.iter_mut().for_each(|v| *v = m.add(*v, offset));
        }
        let c = self.open(&masked, OpenPurpose::MaskedTruncation)?;
        let mut out: Vec<_> = (0..n)
            .map(|i| {
                let s = m.neg(r_hi[i]);
                if lead {
                    m.add(s, m.sub(FieldElement(c[i].0 >> q), out_offset))
                } else {
                    s
                }
            })
            .collect();
        if let Some(bits) = low_bits {
            let mask = (1u128 << q) - 1;
            let c_lo: Vec<u128> = c.iter().map(|v| v.0 & mask).collect();
            let carry = self.bit_lt_public(&c_lo, &bits)?;
            out = self.sub(&out, &carry)?;
        }
        if trace && self.tap.is_some() {
            let mut both = x.to_vec();
            both.extend_from_slice(&out);
            let meta = q as u64 | ((mode == TruncMode::Floor) as u64) << 16;
            self.observe(tap::TRUNC_LABEL, meta, &both);
        }
        Ok(out)
    }

    /// Fixed-point product: multiply then shift by `f`.
    pub fn mul_fixed(&mut self, x: &[FieldElement], y: &[FieldElement], mode: TruncMode) -> Result<Vec<FieldElement>, MpcError> {
        let z = self.mul(x, y)?;
        let f = self.fp.params.f;
        self.trunc(&z, f, mode)
    }

    /// Oblivious selection `a + bit * (b - a)` (one round).
    pub fn select(&mut self, bit: &[FieldElement], a: &[FieldElement], b: &[FieldElement]) -> Result<Vec<FieldElement>, MpcError> {
        let diff = self.sub(b, a)?;
        let t = self.mul(bit, &diff)?;
        self.add(a, &t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn share_and_reconstruct() {
        let m = Modulus::mersenne127();
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let secret = vec![FieldElement(42), FieldElement(0)];
        let shares = share(&m, &secret, 3, 1, 2, &mut rng);
        assert_eq!(reconstruct(&m, &shares, 3).unwrap(), secret);
        assert!(reconstruct(&m, &shares[..2], 3).is_err());
        let mut dup = shares.clone();
        dup[1].party = 0;
        assert!(reconstruct(&m, &dup, 3).is_err());
        let again = share(&m, &secret, 3, 1, 2, &mut rng);
        assert_ne!(again[0].values, shares[0].values);
    }
}
