//! Bit-level primitives: suffix OR, comparison against a public value,
//! bit decomposition, parity and signed comparison.
//!
//! Bit vectors are stored bit-major: `bits[t][i]` is bit `t` (LSB first) of
//! item `i`.

use super::{MpcError, OpenPurpose, Party, TruncMode};
use crate::numeric::FieldElement;

impl Party {
    /// `c_t = x_t OR x_{t+1} OR ... OR x_{l-1}` with a log-depth prefix network
    /// (`ceil(log2 l)` rounds).
    pub fn sufor(&mut self, bits: &[Vec<FieldElement>]) -> Result<Vec<Vec<FieldElement>>, MpcError> {
        let l = bits.len();
        let mut s = bits.to_vec();
        if l == 0 {
            return Ok(s);
        }
        let n = s[0].len();
        if s.iter().any(|b| b.len() != n) {
            return Err(MpcError::Shape("bit columns differ in length".into()));
        }
        let m = self.modulus();
        let mut d = 1;
        while d < l {
            let mut xs = Vec::with_capacity((l - d) * n);
            let mut ys = Vec::with_capacity((l - d) * n);
            for t in 0..l - d {
                xs.extend_from_slice(&s[t]);
                ys.extend_from_slice(&s[t + d]);
            }
            let prod = self.mul(&xs, &ys)?;
            for t in 0..l - d {
                let base = t * n;
                let next: Vec<_> = (0..n)
                    .map(|i| m.sub(m.add(xs[base + i], ys[base + i]), prod[base + i]))
                    .collect();
                s[t] = next;
            }
            d *= 2;
        }
        Ok(s)
    }

    /// Shares of `[a < r]` for public `a` and shared bits of `r`, both of
    /// `bits.len()` bits.
    pub fn bit_lt_public(&mut self, a: &[u128], bits: &[Vec<FieldElement>]) -> Result<Vec<FieldElement>, MpcError> {
        let l = bits.len();
        let n = a.len();
        let m = self.modulus();
        // e_t = a_t XOR r_t, local because a is public
        let e: Vec<Vec<FieldElement>> = (0..l)
            .map(|t| {
                (0..n)
                    .map(|i| {
                        if (a[i] >> t) & 1 == 1 {
                            m.sub(self.public_one(), bits[t][i])
                        } else {
                            bits[t][i]
                        }
                    })
                    .collect()
            })
            .collect();
        let s = self.sufor(&e)?;
        // the most significant differing bit decides; r wins there iff a_t = 0
        let mut out = vec![FieldElement::ZERO; n];
        for t in 0..l {
            for i in 0..n {
                if (a[i] >> t) & 1 == 0 {
                    let f = if t + 1 < l { m.sub(s[t][i], s[t + 1][i]) } else { s[t][i] };
                    out[i] = m.add(out[i], f);
                }
            }
        }
        Ok(out)
    }

    fn public_one(&self) -> FieldElement {
        if self.id == 0 {
            FieldElement::ONE
        } else {
            FieldElement::ZERO
        }
    }

    /// Binary expansion of `x` in `[0, 2^l)`: open `x + r`, then subtract the
    /// shared bits of `r` with a Kogge-Stone carry network.
    pub fn bit_dec(&mut self, x: &[FieldElement], l: u32) -> Result<Vec<Vec<FieldElement>>, MpcError> {
        if l == 0 || l > self.fp.params.k {
            return Err(MpcError::Domain(format!("bit_dec width {l} outside [1, k]")));
        }
        let n = x.len();
        let lu = l as usize;
        if n == 0 {
            return Ok(vec![Vec::new(); lu]);
        }
        let m = self.modulus();
        let sb = self.source.next_shared_bits(l, n)?;
        self.guard.claim(sb.seq)?;
        let masked = self.add(x, &sb.r)?;
        let c = self.open(&masked, OpenPurpose::MaskedDecomposition)?;
        let one = self.public_one();
        // x = c_lo + (~r_lo) + 1 mod 2^l; y_t = 1 - r_t
        let y: Vec<Vec<FieldElement>> =
            sb.bits.iter().map(|col| col.iter().map(|b| m.sub(one, *b)).collect()).collect();
        let abit = |i: usize, t: usize| (c[i].0 >> t) & 1 == 1;
        let mut g = vec![vec![FieldElement::ZERO; n]; lu];
        let mut p = vec![vec![FieldElement::ZERO; n]; lu];
        for t in 0..lu {
            for i in 0..n {
                if abit(i, t) {
                    g[t][i] = y[t][i];
                    p[t][i] = m.sub(one, y[t][i]);
                } else {
                    p[t][i] = y[t][i];
                }
            }
        }
        let prop = p.clone();
        // fold the carry-in of 1 into position 0 (g_0 and p_0 are exclusive)
        for i in 0..n {
            g[0][i] = m.add(g[0][i], p[0][i]);
            p[0][i] = FieldElement::ZERO;
        }
        // carries out of positions 0..l-2
        let width = lu - 1;
        let mut d = 1;
        while d < width {
            let mut xs = Vec::new();
            let mut ys = Vec::new();
            for t in d..width {
                xs.extend_from_slice(&p[t]);
                ys.extend_from_slice(&g[t - d]);
                xs.extend_from_slice(&p[t]);
                ys.extend_from_slice(&p[t - d]);
            }
            let prod = self.mul(&xs, &ys)?;
            let mut at = 0;
            let mut ng = g.clone();
            let mut np = p.clone();
            for t in d..width {
                for i in 0..n {
                    ng[t][i] = m.add(g[t][i], prod[at + i]);
                    np[t][i] = prod[at + n + i];
                }
                at += 2 * n;
            }
            g = ng;
            p = np;
            d *= 2;
        }
        // x_t = p_t XOR carry_t, carry_0 = 1, carry_t = G_{t-1}
        let mut out = Vec::with_capacity(lu);
        out.push(prop[0].iter().map(|v| m.sub(one, *v)).collect::<Vec<_>>());
        if lu > 1 {
            let mut xs = Vec::with_capacity(width * n);
            let mut ys = Vec::with_capacity(width * n);
            for t in 1..lu {
                xs.extend_from_slice(&prop[t]);
                ys.extend_from_slice(&g[t - 1]);
            }
            let prod = self.mul(&xs, &ys)?;
            for t in 1..lu {
                let base = (t - 1) * n;
                out.push(
                    (0..n)
                        .map(|i| {
                            let s = m.add(xs[base + i], ys[base + i]);
                            m.sub(s, m.add(prod[base + i], prod[base + i]))
                        })
                        .collect(),
                );
            }
        }
        Ok(out)
    }

    /// Parity of `x` for a non-negative lift below `2^k` (one round).
    pub fn mod2(&mut self, x: &[FieldElement]) -> Result<Vec<FieldElement>, MpcError> {
        let n = x.len();
        if n == 0 {
            return Ok(Vec::new());
        }
        let m = self.modulus();
        let sb = self.source.next_shared_bits(1, n)?;
        self.guard.claim(sb.seq)?;
        let masked = self.add(x, &sb.r)?;
        let c = self.open(&masked, OpenPurpose::MaskedDecomposition)?;
        let one = self.public_one();
        Ok((0..n)
            .map(|i| if c[i].0 & 1 == 1 { m.sub(one, sb.bits[0][i]) } else { sb.bits[0][i] })
            .collect())
    }

    /// Shares of `[x < 0]` for signed lifts in `[-2^(k-1), 2^(k-1))`.
    pub fn ltz(&mut self, x: &[FieldElement]) -> Result<Vec<FieldElement>, MpcError> {
        let k = self.fp.params.k;
        let t = self.trunc_inner(x, k, k - 1, TruncMode::Floor, false)?;
        Ok(self.neg(&t))
    }

    /// `0` if `x > y`, else `1`. Both lifts must be below `2^(k-2)` in magnitude.
    pub fn comparison(&mut self, x: &[FieldElement], y: &[FieldElement]) -> Result<Vec<FieldElement>, MpcError> {
        let d = self.sub(x, y)?;
        let m = self.modulus();
        let d = self.add_const(&d, m.neg(FieldElement::ONE));
        self.ltz(&d)
    }
}
