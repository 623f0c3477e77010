use super::{MpcError, OpenPurpose, Party};
use crate::numeric::FieldElement;

impl Party {
    /// Prefix products `c_t = x_0 * ... * x_t` of nonzero shared values in
    /// three rounds. `values[t][i]` is factor `t` of item `i`.
    ///
    /// With inverse pairs `(s_t, s_t^-1)` the parties open
    /// `m_t = s_{t-1} * x_t * s_t^-1` (and `m_0 = x_0 * s_0^-1`), whose public
    /// prefix product equals `s_t^-1 * prod x`, and multiply back by `s_t`.
    /// A zero factor makes the output meaningless; callers guarantee nonzero.
    pub fn premulc(&mut self, values: &[Vec<FieldElement>]) -> Result<Vec<Vec<FieldElement>>, MpcError> {
        let l = values.len();
        if l <= 1 {
            return Ok(values.to_vec());
        }
        let n = values[0].len();
        if values.iter().any(|v| v.len() != n) {
            return Err(MpcError::Shape("premulc factors differ in length".into()));
        }
        if n == 0 {
            return Ok(values.to_vec());
        }
        let m = self.modulus();
        let pairs = self.source.next_inverse_pairs(l * n)?;
        self.guard.claim(pairs.seq)?;
        let s = |t: usize| &pairs.s[t * n..(t + 1) * n];
        let s_inv = |t: usize| &pairs.s_inv[t * n..(t + 1) * n];
        let mut prev = Vec::with_capacity((l - 1) * n);
        let mut inv = Vec::with_capacity((l - 1) * n);
        for t in 1..l {
            prev.extend_from_slice(s(t - 1));
            inv.extend_from_slice(s_inv(t));
        }
        let w_tail = self.mul(&prev, &inv)?;
        let mut w = s_inv(0).to_vec();
        w.extend_from_slice(&w_tail);
        let xs: Vec<FieldElement> = values.iter().flatten().copied().collect();
        let masked = self.mul(&w, &xs)?;
        let opened = self.open(&masked, OpenPurpose::PrefixMask)?;
        let mut acc = vec![FieldElement::ONE; n];
        let mut out = Vec::with_capacity(l);
        for t in 0..l {
            for i in 0..n {
                acc[i] = m.mul(acc[i], opened[t * n + i]);
            }
            out.push(s(t).iter().zip(&acc).map(|(a, b)| m.mul(*a, *b)).collect());
        }
        Ok(out)
    }
}
