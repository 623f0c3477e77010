//! Trusted dealer for the offline phase.
//!
//! The dealer hands every party its additive shares of Beaver triples,
//! truncation pairs, shared random bits and inverse pairs. Shares are
//! PRG-compressed: party `i < m-1` receives a pure ChaCha stream keyed by its
//! own seed, and the last party receives the correction that makes the shares
//! sum to the dealt value. Every request carries a sequence number so that
//! streams stay aligned across parties and replayed batches are detectable.
//!
//! Trust assumption: whoever holds the master seed can reconstruct every
//! correlation. In-process sessions derive all party streams from one seed;
//! socket deployments should load per-party cache files instead.

use std::io::{Read, Write};

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::numeric::{FieldElement, FixedPoint, Modulus};
use crate::transport::PartyId;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DealerError {
    #[error("correlation batch {seq} already consumed (last consumed {last})")]
    CorrelationReuse { seq: u64, last: u64 },
    #[error("correlation stream exhausted")]
    Exhausted,
    #[error("correlation request count must be at least 1")]
    EmptyRequest,
    #[error("cached correlation does not match request: expected {expected}, found {found}")]
    Mismatch { expected: String, found: String },
    #[error("correlation cache: {0}")]
    Cache(String),
    #[error("invalid correlation parameters: {0}")]
    Params(String),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TripleBatch {
    pub seq: u64,
    pub a: Vec<FieldElement>,
    pub b: Vec<FieldElement>,
    pub c: Vec<FieldElement>,
}

/// Shares of `r` uniform in `[0, 2^(k+kappa))` and of `r_hi = floor(r / 2^q)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TruncPairBatch {
    pub seq: u64,
    pub q: u32,
    pub r: Vec<FieldElement>,
    pub r_hi: Vec<FieldElement>,
}

/// Shares of `r = sum_t r_t 2^t + 2^nbits * r_hi` with the low `nbits` bits
/// shared individually. `bits[t][i]` is bit `t` of item `i`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SharedBitsBatch {
    pub seq: u64,
    pub nbits: u32,
    pub bits: Vec<Vec<FieldElement>>,
    pub r_hi: Vec<FieldElement>,
    pub r: Vec<FieldElement>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct InversePairBatch {
    pub seq: u64,
    pub s: Vec<FieldElement>,
    pub s_inv: Vec<FieldElement>,
}

/// Per-party supplier of correlated randomness.
pub trait CorrelationSource: Send {
    fn next_triples(&mut self, count: usize) -> Result<TripleBatch, DealerError>;
    fn next_trunc_pairs(&mut self, q: u32, count: usize) -> Result<TruncPairBatch, DealerError>;
    fn next_shared_bits(&mut self, nbits: u32, count: usize) -> Result<SharedBitsBatch, DealerError>;
    fn next_inverse_pairs(&mut self, count: usize) -> Result<InversePairBatch, DealerError>;
}

/// Tracks consumed sequence numbers; each batch may be used once.
#[derive(Clone, Debug, Default)]
pub struct ConsumptionGuard {
    last: Option<u64>,
}

impl ConsumptionGuard {
    pub fn claim(&mut self, seq: u64) -> Result<(), DealerError> {
        if let Some(last) = self.last {
            if seq <= last {
                return Err(DealerError::CorrelationReuse { seq, last });
            }
        }
        self.last = Some(seq);
        Ok(())
    }
}

fn derive_seed(master: &[u8; 32], tag: &str, index: u64) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(master);
    h.update(tag.as_bytes());
    h.update(index.to_le_bytes());
    h.finalize().into()
}

/// Seed holder from which per-party streams are cut.
#[derive(Clone, Debug)]
pub struct Dealer {
    master: [u8; 32],
    parties: usize,
    fp: FixedPoint,
}

impl Dealer {
    pub fn new(seed: u64, parties: usize, fp: FixedPoint) -> Self {
        let mut master = [0u8; 32];
        master[..8].copy_from_slice(&seed.to_le_bytes());
        Dealer { master: derive_seed(&master, "dealer-master", 0), parties, fp }
    }

    pub fn from_entropy(parties: usize, fp: FixedPoint) -> Self {
        let mut master = [0u8; 32];
        rand::rng().fill_bytes(&mut master);
        Dealer { master, parties, fp }
    }

    pub fn stream(&self, party: PartyId) -> DealerStream {
        assert!(party < self.parties, "party {party} out of range");
        DealerStream {
            party,
            parties: self.parties,
            fp: self.fp,
            value_seed: derive_seed(&self.master, "values", 0),
            share_seeds: (0..self.parties as u64 - 1).map(|j| derive_seed(&self.master, "shares", j)).collect(),
            seq: 0,
            limit: None,
            issued: 0,
        }
    }

    pub fn streams(&self) -> Vec<DealerStream> {
        (0..self.parties).map(|p| self.stream(p)).collect()
    }
}

/// One party's view of the dealer.
#[derive(Clone, Debug)]
pub struct DealerStream {
    party: PartyId,
    parties: usize,
    fp: FixedPoint,
    value_seed: [u8; 32],
    share_seeds: Vec<[u8; 32]>,
    seq: u64,
    limit: Option<u64>,
    issued: u64,
}

impl DealerStream {
    /// Caps the total number of correlation items this stream will issue.
    pub fn with_limit(mut self, items: u64) -> Self {
        self.limit = Some(items);
        self
    }

    fn begin(&mut self, count: usize) -> Result<u64, DealerError> {
        if count == 0 {
            return Err(DealerError::EmptyRequest);
        }
        if let Some(limit) = self.limit {
            if self.issued + count as u64 > limit {
                return Err(DealerError::Exhausted);
            }
        }
        self.issued += count as u64;
        self.seq += 1;
        Ok(self.seq)
    }

    fn rng(seed: &[u8; 32], seq: u64, sub: u64) -> ChaCha20Rng {
        let mut rng = ChaCha20Rng::from_seed(*seed);
        rng.set_stream(seq.wrapping_mul(256).wrapping_add(sub));
        rng
    }

    fn is_last(&self) -> bool {
        self.party == self.parties - 1
    }

    /// This party's shares of `values` (only evaluated by the last party).
    fn shares<F>(&self, seq: u64, sub: u64, count: usize, values: F) -> Vec<FieldElement>
    where
        F: FnOnce() -> Vec<FieldElement>,
    {
        let m = self.fp.modulus;
        if !self.is_last() {
            let mut rng = Self::rng(&self.share_seeds[self.party], seq, sub);
            return (0..count).map(|_| m.random(&mut rng)).collect();
        }
        let mut out = values();
        debug_assert_eq!(out.len(), count);
        for seed in &self.share_seeds {
            let mut rng = Self::rng(seed, seq, sub);
            for v in out.iter_mut() {
                *v = m.sub(*v, m.random(&mut rng));
            }
        }
        out
    }

    fn mask_bits(&self) -> u32 {
        self.fp.params.k + self.fp.params.kappa
    }
}

fn uniform_bits(rng: &mut ChaCha20Rng, bits: u32) -> u128 {
    if bits == 0 {
        0
    } else {
        rng.random::<u128>() >> (128 - bits)
    }
}

impl CorrelationSource for DealerStream {
    fn next_triples(&mut self, count: usize) -> Result<TripleBatch, DealerError> {
        let seq = self.begin(count)?;
        let m = self.fp.modulus;
        let vseed = self.value_seed;
        let values = || {
            let mut rng = Self::rng(&vseed, seq, 0);
            let a: Vec<_> = (0..count).map(|_| m.random(&mut rng)).collect();
            let b: Vec<_> = (0..count).map(|_| m.random(&mut rng)).collect();
            let c: Vec<_> = a.iter().zip(&b).map(|(x, y)| m.mul(*x, *y)).collect();
            (a, b, c)
        };
        if self.is_last() {
            let (a, b, c) = values();
            Ok(TripleBatch {
                seq,
                a: self.shares(seq, 1, count, || a),
                b: self.shares(seq, 2, count, || b),
                c: self.shares(seq, 3, count, || c),
            })
        } else {
            Ok(TripleBatch {
                seq,
                a: self.shares(seq, 1, count, Vec::new),
                b: self.shares(seq, 2, count, Vec::new),
                c: self.shares(seq, 3, count, Vec::new),
            })
        }
    }

    fn next_trunc_pairs(&mut self, q: u32, count: usize) -> Result<TruncPairBatch, DealerError> {
        let width = self.mask_bits();
        if q == 0 || q >= width {
            return Err(DealerError::Params(format!("shift {q} outside (0, {width})")));
        }
        let seq = self.begin(count)?;
        let (r, r_hi) = if self.is_last() {
            let mut rng = Self::rng(&self.value_seed, seq, 0);
            let raw: Vec<u128> = (0..count).map(|_| uniform_bits(&mut rng, width)).collect();
            let r: Vec<_> = raw.iter().map(|&v| FieldElement(v)).collect();
            let hi: Vec<_> = raw.iter().map(|&v| FieldElement(v >> q)).collect();
            (self.shares(seq, 1, count, || r), self.shares(seq, 2, count, || hi))
        } else {
            (self.shares(seq, 1, count, Vec::new), self.shares(seq, 2, count, Vec::new))
        };
        Ok(TruncPairBatch { seq, q, r, r_hi })
    }

    fn next_shared_bits(&mut self, nbits: u32, count: usize) -> Result<SharedBitsBatch, DealerError> {
        let width = self.mask_bits();
        if nbits == 0 || nbits >= width {
            return Err(DealerError::Params(format!("bit count {nbits} outside (0, {width})")));
        }
        let seq = self.begin(count)?;
        let n = nbits as usize;
        let mut bit_values: Vec<Vec<FieldElement>> = Vec::new();
        let mut hi_values = Vec::new();
        let mut r_values = Vec::new();
        if self.is_last() {
            let mut rng = Self::rng(&self.value_seed, seq, 0);
            bit_values = vec![Vec::with_capacity(count); n];
            for _ in 0..count {
                let low = uniform_bits(&mut rng, nbits);
                let hi = uniform_bits(&mut rng, width - nbits);
                for (t, col) in bit_values.iter_mut().enumerate() {
                    col.push(FieldElement((low >> t) & 1));
                }
                hi_values.push(FieldElement(hi));
                r_values.push(FieldElement(low + (hi << nbits)));
            }
        }
        let mut bit_values = bit_values.into_iter();
        let bits = (0..n)
            .map(|t| self.shares(seq, 3 + t as u64, count, || bit_values.next().unwrap_or_default()))
            .collect();
        let r_hi = self.shares(seq, 1, count, || hi_values);
        let r = self.shares(seq, 2, count, || r_values);
        Ok(SharedBitsBatch { seq, nbits, bits, r_hi, r })
    }

    fn next_inverse_pairs(&mut self, count: usize) -> Result<InversePairBatch, DealerError> {
        let seq = self.begin(count)?;
        let m = self.fp.modulus;
        if self.is_last() {
            let mut rng = Self::rng(&self.value_seed, seq, 0);
            let s: Vec<_> = (0..count).map(|_| m.random_nonzero(&mut rng)).collect();
            let s_inv = m.batch_inv(&s).expect("nonzero by construction");
            Ok(InversePairBatch { seq, s: self.shares(seq, 1, count, || s), s_inv: self.shares(seq, 2, count, || s_inv) })
        } else {
            Ok(InversePairBatch {
                seq,
                s: self.shares(seq, 1, count, Vec::new),
                s_inv: self.shares(seq, 2, count, Vec::new),
            })
        }
    }
}

const CACHE_MAGIC: &[u8; 8] = b"DPMPCCOR";
const CACHE_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Eq)]
enum Record {
    Triples(TripleBatch),
    Trunc(TruncPairBatch),
    Bits(SharedBitsBatch),
    Inverse(InversePairBatch),
}

impl Record {
    fn describe(&self) -> String {
        match self {
            Record::Triples(b) => format!("triples x{}", b.a.len()),
            Record::Trunc(b) => format!("trunc(q={}) x{}", b.q, b.r.len()),
            Record::Bits(b) => format!("bits(n={}) x{}", b.nbits, b.r.len()),
            Record::Inverse(b) => format!("inverse x{}", b.s.len()),
        }
    }
}

/// Wraps a source and keeps every issued batch for writing to a cache file.
pub struct RecordingSource<S> {
    inner: S,
    records: Vec<Record>,
}

impl<S: CorrelationSource> RecordingSource<S> {
    pub fn new(inner: S) -> Self {
        RecordingSource { inner, records: Vec::new() }
    }

    /// Header: magic, version, modulus, k, f, then item counts for triples,
    /// trunc pairs, shared-bit sets and inverse pairs, then the record count.
    /// Residues are 16-byte little-endian.
    pub fn write_cache<W: Write>(&self, fp: &FixedPoint, mut w: W) -> std::io::Result<()> {
        let mut counts = [0u64; 4];
        for r in &self.records {
            match r {
                Record::Triples(b) => counts[0] += b.a.len() as u64,
                Record::Trunc(b) => counts[1] += b.r.len() as u64,
                Record::Bits(b) => counts[2] += b.r.len() as u64,
                Record::Inverse(b) => counts[3] += b.s.len() as u64,
            }
        }
        w.write_all(CACHE_MAGIC)?;
        w.write_all(&CACHE_VERSION.to_le_bytes())?;
        w.write_all(&fp.modulus.value().to_le_bytes())?;
        w.write_all(&fp.params.k.to_le_bytes())?;
        w.write_all(&fp.params.f.to_le_bytes())?;
        for c in counts {
            w.write_all(&c.to_le_bytes())?;
        }
        w.write_all(&(self.records.len() as u64).to_le_bytes())?;
        let put = |w: &mut W, v: &[FieldElement]| -> std::io::Result<()> {
            for e in v {
                w.write_all(&e.to_le_bytes())?;
            }
            Ok(())
        };
        for r in &self.records {
            match r {
                Record::Triples(b) => {
                    w.write_all(&[0u8])?;
                    w.write_all(&b.seq.to_le_bytes())?;
                    w.write_all(&(b.a.len() as u64).to_le_bytes())?;
                    w.write_all(&0u32.to_le_bytes())?;
                    put(&mut w, &b.a)?;
                    put(&mut w, &b.b)?;
                    put(&mut w, &b.c)?;
                }
                Record::Trunc(b) => {
                    w.write_all(&[1u8])?;
                    w.write_all(&b.seq.to_le_bytes())?;
                    w.write_all(&(b.r.len() as u64).to_le_bytes())?;
                    w.write_all(&b.q.to_le_bytes())?;
                    put(&mut w, &b.r)?;
                    put(&mut w, &b.r_hi)?;
                }
                Record::Bits(b) => {
                    w.write_all(&[2u8])?;
                    w.write_all(&b.seq.to_le_bytes())?;
                    w.write_all(&(b.r.len() as u64).to_le_bytes())?;
                    w.write_all(&b.nbits.to_le_bytes())?;
                    for col in &b.bits {
                        put(&mut w, col)?;
                    }
                    put(&mut w, &b.r_hi)?;
                    put(&mut w, &b.r)?;
                }
                Record::Inverse(b) => {
                    w.write_all(&[3u8])?;
                    w.write_all(&b.seq.to_le_bytes())?;
                    w.write_all(&(b.s.len() as u64).to_le_bytes())?;
                    w.write_all(&0u32.to_le_bytes())?;
                    put(&mut w, &b.s)?;
                    put(&mut w, &b.s_inv)?;
                }
            }
        }
        Ok(())
    }
}

impl<S: CorrelationSource> CorrelationSource for RecordingSource<S> {
    fn next_triples(&mut self, count: usize) -> Result<TripleBatch, DealerError> {
        let b = self.inner.next_triples(count)?;
        self.records.push(Record::Triples(b.clone()));
        Ok(b)
    }

    fn next_trunc_pairs(&mut self, q: u32, count: usize) -> Result<TruncPairBatch, DealerError> {
        let b = self.inner.next_trunc_pairs(q, count)?;
        self.records.push(Record::Trunc(b.clone()));
        Ok(b)
    }

    fn next_shared_bits(&mut self, nbits: u32, count: usize) -> Result<SharedBitsBatch, DealerError> {
        let b = self.inner.next_shared_bits(nbits, count)?;
        self.records.push(Record::Bits(b.clone()));
        Ok(b)
    }

    fn next_inverse_pairs(&mut self, count: usize) -> Result<InversePairBatch, DealerError> {
        let b = self.inner.next_inverse_pairs(count)?;
        self.records.push(Record::Inverse(b.clone()));
        Ok(b)
    }
}

/// Replays a cache file; requests must arrive in the recorded order.
pub struct CachedSource {
    records: std::vec::IntoIter<Record>,
}

/// Summary of a cache header.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CacheHeader {
    pub version: u32,
    pub modulus: u128,
    pub k: u32,
    pub f: u32,
    pub triples: u64,
    pub trunc_pairs: u64,
    pub shared_bits: u64,
    pub inverse_pairs: u64,
}

impl CachedSource {
    pub fn read<R: Read>(fp: &FixedPoint, mut r: R) -> Result<(CacheHeader, Self), DealerError> {
        let io = |e: std::io::Error| DealerError::Cache(e.to_string());
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(io)?;
        if &magic != CACHE_MAGIC {
            return Err(DealerError::Cache("bad magic".into()));
        }
        let mut b4 = [0u8; 4];
        let mut b8 = [0u8; 8];
        let mut b16 = [0u8; 16];
        let mut u32_ = |r: &mut R| -> Result<u32, DealerError> {
            r.read_exact(&mut b4).map_err(io)?;
            Ok(u32::from_le_bytes(b4))
        };
        let version = u32_(&mut r)?;
        if version != CACHE_VERSION {
            return Err(DealerError::Cache(format!("unsupported version {version}")));
        }
        r.read_exact(&mut b16).map_err(io)?;
        let modulus = u128::from_le_bytes(b16);
        let k = u32_(&mut r)?;
        let f = u32_(&mut r)?;
        if modulus != fp.modulus.value() || k != fp.params.k || f != fp.params.f {
            return Err(DealerError::Cache("cache was generated for different field parameters".into()));
        }
        let mut u64_ = |r: &mut R| -> Result<u64, DealerError> {
            r.read_exact(&mut b8).map_err(io)?;
            Ok(u64::from_le_bytes(b8))
        };
        let counts = [u64_(&mut r)?, u64_(&mut r)?, u64_(&mut r)?, u64_(&mut r)?];
        let nrec = u64_(&mut r)?;
        let m = fp.modulus;
        let mut vec_of = |r: &mut R, n: usize| -> Result<Vec<FieldElement>, DealerError> {
            let mut out = Vec::with_capacity(n);
            for _ in 0..n {
                r.read_exact(&mut b16).map_err(io)?;
                let v = u128::from_le_bytes(b16);
                if v >= m.value() {
                    return Err(DealerError::Cache("residue out of range".into()));
                }
                out.push(FieldElement(v));
            }
            Ok(out)
        };
        let mut records = Vec::with_capacity(nrec as usize);
        for _ in 0..nrec {
            let mut tag = [0u8; 1];
            r.read_exact(&mut tag).map_err(io)?;
            let mut hdr = [0u8; 20];
            r.read_exact(&mut hdr).map_err(io)?;
            let seq = u64::from_le_bytes(hdr[0..8].try_into().unwrap());
            let n = u64::from_le_bytes(hdr[8..16].try_into().unwrap()) as usize;
            let param = u32::from_le_bytes(hdr[16..20].try_into().unwrap());
            let rec = match tag[0] {
                0 => Record::Triples(TripleBatch {
                    seq,
                    a: vec_of(&mut r, n)?,
                    b: vec_of(&mut r, n)?,
                    c: vec_of(&mut r, n)?,
                }),
                1 => Record::Trunc(TruncPairBatch { seq, q: param, r: vec_of(&mut r, n)?, r_hi: vec_of(&mut r, n)? }),
                2 => {
                    let mut bits = Vec::with_capacity(param as usize);
                    for _ in 0..param {
                        bits.push(vec_of(&mut r, n)?);
                    }
                    Record::Bits(SharedBitsBatch {
                        seq,
                        nbits: param,
                        bits,
                        r_hi: vec_of(&mut r, n)?,
                        r: vec_of(&mut r, n)?,
                    })
                }
                3 => Record::Inverse(InversePairBatch { seq, s: vec_of(&mut r, n)?, s_inv: vec_of(&mut r, n)? }),
                t => return Err(DealerError::Cache(format!("unknown record tag {t}"))),
            };
            records.push(rec);
        }
        let header = CacheHeader {
            version,
            modulus,
            k,
            f,
            triples: counts[0],
            trunc_pairs: counts[1],
            shared_bits: counts[2],
            inverse_pairs: counts[3],
        };
        Ok((header, CachedSource { records: records.into_iter() }))
    }

    fn next(&mut self) -> Result<Record, DealerError> {
        self.records.next().ok_or(DealerError::Exhausted)
    }
}

fn mismatch(expected: String, found: &Record) -> DealerError {
    DealerError::Mismatch { expected, found: found.describe() }
}

impl CorrelationSource for CachedSource {
    fn next_triples(&mut self, count: usize) -> Result<TripleBatch, DealerError> {
        let want = format!("triples x{count}");
        match self.next()? {
            Record::Triples(b) if b.a.len() == count => Ok(b),
            other => Err(mismatch(want, &other)),
        }
    }

    fn next_trunc_pairs(&mut self, q: u32, count: usize) -> Result<TruncPairBatch, DealerError> {
        let want = format!("trunc(q={q}) x{count}");
        match self.next()? {
            Record::Trunc(b) if b.q == q && b.r.len() == count => Ok(b),
            other => Err(mismatch(want, &other)),
        }
    }

    fn next_shared_bits(&mut self, nbits: u32, count: usize) -> Result<SharedBitsBatch, DealerError> {
        let want = format!("bits(n={nbits}) x{count}");
        match self.next()? {
            Record::Bits(b) if b.nbits == nbits && b.r.len() == count => Ok(b),
            other => Err(mismatch(want, &other)),
        }
    }

    fn next_inverse_pairs(&mut self, count: usize) -> Result<InversePairBatch, DealerError> {
        let want = format!("inverse x{count}");
        match self.next()? {
            Record::Inverse(b) if b.s.len() == count => Ok(b),
            other => Err(mismatch(want, &other)),
        }
    }
}

/// Sums share vectors element-wise; test and tooling helper.
pub fn combine(modulus: &Modulus, parts: &[&[FieldElement]]) -> Vec<FieldElement> {
    let n = parts.first().map_or(0, |p| p.len());
    (0..n).map(|i| modulus.sum(parts.iter().map(|p| p[i]))).collect()
}
