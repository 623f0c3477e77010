//! Resharing-based oblivious shuffle for honest majority.
//!
//! With `t = floor((m-1)/2)` possible corruptions, the parties iterate over
//! every subset `S` of size `m - t` in lexicographic order. Parties outside
//! `S` hand their shares to the first member of `S`, who also distributes a
//! fresh permutation seed to the other members; the members permute their
//! rows and reshare them to all `m` parties. Any coalition of at most `t`
//! parties misses some subset entirely, so the composed permutation stays
//! hidden from it. For three parties this is three passes of two rounds.

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

use super::{MpcError, Party};
use crate::numeric::FieldElement;
use crate::transport::PartyId;

/// Subsets used by the shuffle, in execution order.
pub fn shuffle_subsets(m: usize) -> Vec<Vec<PartyId>> {
    let t = (m - 1) / 2;
    let size = m - t;
    let mut out = Vec::new();
    let mut cur = Vec::with_capacity(size);
    fn rec(start: usize, m: usize, size: usize, cur: &mut Vec<PartyId>, out: &mut Vec<Vec<PartyId>>) {
        if cur.len() == size {
            out.push(cur.clone());
            return;
        }
        for p in start..m {
            cur.push(p);
            rec(p + 1, m, size, cur, out);
            cur.pop();
        }
    }
    rec(0, m, size, &mut cur, &mut out);
    out
}

fn permute_rows(rows: &[FieldElement], width: usize, perm: &[usize]) -> Vec<FieldElement> {
    let mut out = Vec::with_capacity(rows.len());
    for &src in perm {
        out.extend_from_slice(&rows[src * width..(src + 1) * width]);
    }
    out
}

impl Party {
    /// Obliviously permutes `n = rows.len() / width` shared rows.
    pub fn oblivious_shuffle(&mut self, rows: &[FieldElement], width: usize) -> Result<Vec<FieldElement>, MpcError> {
        if width == 0 || rows.len() % width != 0 {
            return Err(MpcError::Shape(format!("{} values do not form rows of width {width}", rows.len())));
        }
        let n = rows.len() / width;
        if n <= 1 {
            return Ok(rows.to_vec());
        }
        let m = self.modulus();
        let me = self.id;
        let mut cur = rows.to_vec();
        for subset in shuffle_subsets(self.parties) {
            let leader = subset[0];
            let member = subset.contains(&me);
            // gather onto the subset and agree on a permutation seed
            let mut seed = [0u8; 32];
            if !member {
                self.send_elems(leader, &cur)?;
                cur.iter_mut().for_each(|v| *v = FieldElement::ZERO);
            } else if me == leader {
                self.rng.fill_bytes(&mut seed);
                for &p in subset.iter().skip(1) {
                    self.transport.send(p, seed.to_vec())?;
                }
                for p in 0..self.parties {
                    if !subset.contains(&p) {
                        let theirs = self.recv_elems(p, cur.len())?;
                        for (a, b) in cur.iter_mut().zip(theirs) {
                            *a = m.add(*a, b);
                        }
                    }
                }
            } else {
                let bytes = self.transport.receive(leader)?;
                seed = bytes
                    .try_into()
                    .map_err(|_| MpcError::Shape("permutation seed must be 32 bytes".into()))?;
            }
            self.barrier()?;

            // members permute and reshare to everyone
            if member {
                let mut perm: Vec<usize> = (0..n).collect();
                perm.shuffle(&mut ChaCha20Rng::from_seed(seed));
                let mut mine = permute_rows(&cur, width, &perm);
                for p in 0..self.parties {
                    if p == me {
                        continue;
                    }
                    let part: Vec<_> = (0..mine.len()).map(|_| m.random(&mut self.rng)).collect();
                    for (a, b) in mine.iter_mut().zip(&part) {
                        *a = m.sub(*a, *b);
                    }
                    self.send_elems(p, &part)?;
                }
                cur = mine;
            }
            for &p in &subset {
                if p == me {
                    continue;
                }
                let part = self.recv_elems(p, cur.len())?;
                for (a, b) in cur.iter_mut().zip(part) {
                    *a = m.add(*a, b);
                }
            }
            self.barrier()?;
        }
        Ok(cur)
    }
}
