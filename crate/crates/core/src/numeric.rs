//! Prime-field arithmetic and signed fixed-point encoding.
//!
//! Every secret handled by the protocols is a residue modulo a public prime.
//! Real numbers are mapped to residues by scaling with `2^f` and rounding;
//! negative values wrap to the upper half of the field.

use std::fmt;

use rand::Rng;
use thiserror::Error;

/// The Mersenne prime `2^127 - 1`, the default modulus.
pub const MERSENNE_127: u128 = (1u128 << 127) - 1;

/// The prime `10^17 + 3`, kept for parity runs with smaller parameters.
pub const COMPAT_PRIME: u128 = 100_000_000_000_000_003;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericError {
    #[error("modulus {0} is not a supported odd prime (need 2^127-1 or a prime below 2^64)")]
    UnsupportedModulus(u128),
    #[error("invalid fixed-point parameters: {0}")]
    InvalidParams(String),
    #[error("value {value} outside the encodable range (|x| < 2^{bound_bits})")]
    OutOfRange { value: f64, bound_bits: u32 },
    #[error("residue lifts to {lift}, beyond 2^{k}: protocol overflow")]
    Corruption { lift: i128, k: u32 },
    #[error("field element zero has no inverse")]
    ZeroInverse,
    #[error("cannot parse decimal `{0}`")]
    BadDecimal(String),
}

/// One residue in `[0, p)`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FieldElement(pub u128);

impl FieldElement {
    pub const ZERO: FieldElement = FieldElement(0);
    pub const ONE: FieldElement = FieldElement(1);

    pub fn residue(self) -> u128 {
        self.0
    }

    pub fn to_le_bytes(self) -> [u8; 16] {
        self.0.to_le_bytes()
    }

    pub fn from_le_bytes(bytes: [u8; 16]) -> Self {
        FieldElement(u128::from_le_bytes(bytes))
    }
}

impl fmt::Display for FieldElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Reduction {
    Mersenne127,
    Word,
}

/// A public prime modulus together with its arithmetic.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Modulus {
    value: u128,
    reduction: Reduction,
}

impl Modulus {
    pub fn mersenne127() -> Self {
        Modulus { value: MERSENNE_127, reduction: Reduction::Mersenne127 }
    }

    /// Accepts `2^127 - 1` or any odd prime below `2^64`.
    pub fn new(value: u128) -> Result<Self, NumericError> {
        if value == MERSENNE_127 {
            return Ok(Self::mersenne127());
        }
        if value > u64::MAX as u128 || value < 3 || value % 2 == 0 || !is_prime_u64(value as u64) {
            return Err(NumericError::UnsupportedModulus(value));
        }
        Ok(Modulus { value, reduction: Reduction::Word })
    }

    pub fn value(&self) -> u128 {
        self.value
    }

    /// `floor(log2(p))`.
    pub fn bits(&self) -> u32 {
        127 - self.value.leading_zeros()
    }

    pub fn element(&self, v: u128) -> FieldElement {
        FieldElement(v % self.value)
    }

    pub fn from_i128(&self, v: i128) -> FieldElement {
        let p = self.value as i128;
        FieldElement(v.rem_euclid(p) as u128)
    }

    /// Signed representative in `(-p/2, p/2]`.
    pub fn lift(&self, e: FieldElement) -> i128 {
        if e.0 > self.value / 2 {
            e.0 as i128 - self.value as i128
        } else {
            e.0 as i128
        }
    }

    #[inline]
    pub fn add(&self, a: FieldElement, b: FieldElement) -> FieldElement {
        // a, b < p < 2^127, so the sum cannot overflow u128.
        let s = a.0 + b.0;
        FieldElement(if s >= self.value { s - self.value } else { s })
    }

    #[inline]
    pub fn sub(&self, a: FieldElement, b: FieldElement) -> FieldElement {
        if a.0 >= b.0 {
            FieldElement(a.0 - b.0)
        } else {
            FieldElement(a.0 + (self.value - b.0))
        }
    }

    #[inline]
    pub fn neg(&self, a: FieldElement) -> FieldElement {
        if a.0 == 0 {
            a
        } else {
            FieldElement(self.value - a.0)
        }
    }

    #[inline]
    pub fn mul(&self, a: FieldElement, b: FieldElement) -> FieldElement {
        match self.reduction {
            Reduction::Word => FieldElement((a.0 * b.0) % self.value),
            Reduction::Mersenne127 => FieldElement(mul_mersenne127(a.0, b.0)),
        }
    }

    pub fn pow(&self, base: FieldElement, mut exp: u128) -> FieldElement {
        let mut acc = FieldElement::ONE;
        let mut b = base;
        while exp > 0 {
            if exp & 1 == 1 {
                acc = self.mul(acc, b);
            }
            b = self.mul(b, b);
            exp >>= 1;
        }
        acc
    }

    pub fn inv(&self, a: FieldElement) -> Result<FieldElement, NumericError> {
        if a.0 == 0 {
            return Err(NumericError::ZeroInverse);
        }
        Ok(self.pow(a, self.value - 2))
    }

    /// Inverts every element with a single exponentiation (Montgomery's trick).
    pub fn batch_inv(&self, values: &[FieldElement]) -> Result<Vec<FieldElement>, NumericError> {
        let mut prefix = Vec::with_capacity(values.len());
        let mut acc = FieldElement::ONE;
        for &v in values {
            if v.0 == 0 {
                return Err(NumericError::ZeroInverse);
            }
            prefix.push(acc);
            acc = self.mul(acc, v);
        }
        let mut inv_acc = self.inv(acc)?;
        let mut out = vec![FieldElement::ZERO; values.len()];
        for i in (0..values.len()).rev() {
            out[i] = self.mul(inv_acc, prefix[i]);
            inv_acc = self.mul(inv_acc, values[i]);
        }
        Ok(out)
    }

    /// Uniform residue by rejection sampling.
    pub fn random<R: Rng + ?Sized>(&self, rng: &mut R) -> FieldElement {
        match self.reduction {
            Reduction::Mersenne127 => loop {
                let v = rng.random::<u128>() >> 1;
                if v < self.value {
                    return FieldElement(v);
                }
            },
            Reduction::Word => {
                let p = self.value as u64;
                let zone = u64::MAX - (u64::MAX % p) - 1;
                loop {
                    let v = rng.random::<u64>();
                    if v <= zone {
                        return FieldElement((v % p) as u128);
                    }
                }
            }
        }
    }

    pub fn random_nonzero<R: Rng + ?Sized>(&self, rng: &mut R) -> FieldElement {
        loop {
            let v = self.random(rng);
            if v.0 != 0 {
                return v;
            }
        }
    }

    pub fn sum<I: IntoIterator<Item = FieldElement>>(&self, it: I) -> FieldElement {
        it.into_iter().fold(FieldElement::ZERO, |acc, v| self.add(acc, v))
    }
}

/// `a * b mod (2^127 - 1)` via a 256-bit schoolbook product.
#[inline]
fn mul_mersenne127(a: u128, b: u128) -> u128 {
    let (a0, a1) = (a as u64 as u128, a >> 64);
    let (b0, b1) = (b as u64 as u128, b >> 64);
    let ll = a0 * b0;
    let lh = a0 * b1;
    let hl = a1 * b0;
    let hh = a1 * b1;
    let (mid, mid_carry) = lh.overflowing_add(hl);
    let (lo, c1) = ll.overflowing_add(mid << 64);
    let hi = hh + (mid >> 64) + ((mid_carry as u128) << 64) + c1 as u128;
    // 2^128 = 2 (mod p), 2^127 = 1 (mod p)
    let s = (lo & MERSENNE_127) + (lo >> 127) + (hi << 1);
    let s = (s & MERSENNE_127) + (s >> 127);
    if s >= MERSENNE_127 {
        s - MERSENNE_127
    } else {
        s
    }
}

fn mul_mod_u64(a: u64, b: u64, m: u64) -> u64 {
    ((a as u128 * b as u128) % m as u128) as u64
}

fn pow_mod_u64(mut b: u64, mut e: u64, m: u64) -> u64 {
    let mut acc = 1u64;
    b %= m;
    while e > 0 {
        if e & 1 == 1 {
            acc = mul_mod_u64(acc, b, m);
        }
        b = mul_mod_u64(b, b, m);
        e >>= 1;
    }
    acc
}

/// Deterministic Miller-Rabin for 64-bit integers.
pub fn is_prime_u64(n: u64) -> bool {
    if n < 2 {
        return false;
    }
    const BASES: [u64; 12] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37];
    for p in BASES {
        if n % p == 0 {
            return n == p;
        }
    }
    let mut d = n - 1;
    let mut s = 0;
    while d % 2 == 0 {
        d /= 2;
        s += 1;
    }
    'witness: for a in BASES {
        let mut x = pow_mod_u64(a, d, n);
        if x == 1 || x == n - 1 {
            continue;
        }
        for _ in 1..s {
            x = mul_mod_u64(x, x, n);
            if x == n - 1 {
                continue 'witness;
            }
        }
        return false;
    }
    true
}

/// `k`: magnitude bits of encodable integers, `f`: fraction bits,
/// `kappa`: statistical masking gap.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FixedPointParams {
    pub k: u32,
    pub f: u32,
    pub kappa: u32,
}

impl Default for FixedPointParams {
    fn default() -> Self {
        FixedPointParams { k: 64, f: 20, kappa: 40 }
    }
}

impl FixedPointParams {
    /// Parameters matching the `10^17 + 3` field.
    pub fn compat() -> Self {
        FixedPointParams { k: 36, f: 20, kappa: 19 }
    }

    pub fn validate(&self, modulus: &Modulus) -> Result<(), NumericError> {
        if self.f >= self.k {
            return Err(NumericError::InvalidParams(format!("f = {} must be below k = {}", self.f, self.k)));
        }
        if self.f % 2 != 0 {
            return Err(NumericError::InvalidParams(format!("f = {} must be even", self.f)));
        }
        if self.k < 8 || self.k > 96 {
            return Err(NumericError::InvalidParams(format!("k = {} outside [8, 96]", self.k)));
        }
        if self.k + self.kappa + 1 > modulus.bits() {
            return Err(NumericError::InvalidParams(format!(
                "2^(k+kappa+1) = 2^{} does not fit below the modulus (2^{})",
                self.k + self.kappa + 1,
                modulus.bits()
            )));
        }
        Ok(())
    }
}

/// Encoder bound to one modulus and parameter set.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FixedPoint {
    pub modulus: Modulus,
    pub params: FixedPointParams,
}

impl Default for FixedPoint {
    fn default() -> Self {
        FixedPoint { modulus: Modulus::mersenne127(), params: FixedPointParams::default() }
    }
}

impl FixedPoint {
    pub fn new(modulus: Modulus, params: FixedPointParams) -> Result<Self, NumericError> {
        params.validate(&modulus)?;
        Ok(FixedPoint { modulus, params })
    }

    pub fn compat() -> Self {
        let modulus = Modulus::new(COMPAT_PRIME).expect("10^17+3 is prime");
        FixedPoint::new(modulus, FixedPointParams::compat()).expect("compat parameters are valid")
    }

    pub fn f(&self) -> u32 {
        self.params.f
    }

    pub fn k(&self) -> u32 {
        self.params.k
    }

    /// `2^f` as a float.
    pub fn scale(&self) -> f64 {
        (self.params.f as f64).exp2()
    }

    /// `round(x * 2^f)` with ties away from zero, as a signed integer.
    pub fn to_raw(&self, x: f64) -> Result<i128, NumericError> {
        let bound_bits = self.params.k - self.params.f - 1;
        if !x.is_finite() || x.abs() >= (bound_bits as f64).exp2() {
            return Err(NumericError::OutOfRange { value: x, bound_bits });
        }
        Ok((x * self.scale()).round() as i128)
    }

    pub fn encode(&self, x: f64) -> Result<FieldElement, NumericError> {
        Ok(self.modulus.from_i128(self.to_raw(x)?))
    }

    /// Exact decimal-string encoding, no intermediate float rounding.
    pub fn encode_decimal(&self, s: &str) -> Result<FieldElement, NumericError> {
        Ok(self.modulus.from_i128(self.decimal_to_raw(s)?))
    }

    pub fn decimal_to_raw(&self, s: &str) -> Result<i128, NumericError> {
        let bad = || NumericError::BadDecimal(s.to_string());
        let t = s.trim();
        let (neg, body) = match t.as_bytes().first() {
            Some(b'-') => (true, &t[1..]),
            Some(b'+') => (false, &t[1..]),
            _ => (false, t),
        };
        let (int_part, frac_part) = match body.split_once('.') {
            Some((i, fr)) => (i, fr),
            None => (body, ""),
        };
        if int_part.is_empty() && frac_part.is_empty() {
            return Err(bad());
        }
        if !int_part.bytes().all(|b| b.is_ascii_digit()) || !frac_part.bytes().all(|b| b.is_ascii_digit()) {
            return Err(bad());
        }
        let frac_part = frac_part.trim_end_matches('0');
        if frac_part.len() > 18 {
            return Err(bad());
        }
        let mut num: u128 = 0;
        for b in int_part.bytes().chain(frac_part.bytes()) {
            num = num.checked_mul(10).and_then(|v| v.checked_add((b - b'0') as u128)).ok_or_else(bad)?;
        }
        let den = 10u128.pow(frac_part.len() as u32);
        let scaled = num.checked_shl(self.params.f).filter(|v| v >> self.params.f == num).ok_or_else(bad)?;
        // round half away from zero on the magnitude
        let q = scaled / den;
        let r = scaled % den;
        let mag = if 2 * r >= den { q + 1 } else { q };
        let bound = 1u128 << (self.params.k - 1);
        if mag >= bound {
            let value: f64 = t.parse().unwrap_or(f64::INFINITY);
            return Err(NumericError::OutOfRange { value, bound_bits: self.params.k - self.params.f - 1 });
        }
        Ok(if neg { -(mag as i128) } else { mag as i128 })
    }

    /// Signed lift of `e`, checked against `2^k`.
    pub fn lift_checked(&self, e: FieldElement) -> Result<i128, NumericError> {
        let lift = self.modulus.lift(e);
        if lift.unsigned_abs() >= 1u128 << self.params.k {
            return Err(NumericError::Corruption { lift, k: self.params.k });
        }
        Ok(lift)
    }

    pub fn decode(&self, e: FieldElement) -> Result<f64, NumericError> {
        Ok(self.raw_to_f64(self.lift_checked(e)?))
    }

    pub fn raw_to_f64(&self, raw: i128) -> f64 {
        raw as f64 / self.scale()
    }

    pub fn from_raw(&self, raw: i128) -> FieldElement {
        self.modulus.from_i128(raw)
    }

    pub fn encode_vec(&self, xs: &[f64]) -> Result<Vec<FieldElement>, NumericError> {
        xs.iter().map(|&x| self.encode(x)).collect()
    }

    pub fn decode_vec(&self, es: &[FieldElement]) -> Result<Vec<f64>, NumericError> {
        es.iter().map(|&e| self.decode(e)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn fp() -> FixedPoint {
        FixedPoint::default()
    }

    #[test]
    #[allow(clippy::approx_constant)]
    fn encode_examples() {
        let fp = fp();
        let p = fp.modulus.value();
        assert_eq!(fp.encode(1.0).unwrap().0, 1_048_576);
        assert_eq!(fp.encode(-0.5).unwrap().0, p - 524_288);
        assert_eq!(fp.encode(3.1415926).unwrap().0, 3_294_199);
        assert_eq!(fp.encode_decimal("3.1415926").unwrap().0, 3_294_199);
    }

    #[test]
    fn decode_examples() {
        let fp = fp();
        let p = fp.modulus.value();
        assert_eq!(fp.decode(FieldElement(1_048_576)).unwrap(), 1.0);
        assert_eq!(fp.decode(FieldElement(p - 1_048_576)).unwrap(), -1.0);
        assert_eq!(fp.decode(fp.encode(-7.25).unwrap()).unwrap(), -7.25);
    }

    #[test]
    fn range_and_corruption_errors() {
        let fp = fp();
        assert!(matches!(fp.encode(2f64.powi(43)), Err(NumericError::OutOfRange { .. })));
        assert!(fp.encode(2f64.powi(43) - 1.0).is_ok());
        assert!(matches!(fp.encode(f64::NAN), Err(NumericError::OutOfRange { .. })));
        let big = fp.from_raw(1i128 << 70);
        assert!(matches!(fp.decode(big), Err(NumericError::Corruption { .. })));
    }

    #[test]
    fn field_examples() {
        let m = Modulus::mersenne127();
        let p = m.value();
        assert_eq!(m.add(FieldElement(p - 1), FieldElement(2)), FieldElement(1));
        let a = FieldElement(12345);
        assert_eq!(m.mul(a, m.inv(a).unwrap()), FieldElement::ONE);
        assert_eq!(m.neg(FieldElement::ZERO), FieldElement::ZERO);
        assert_eq!(m.inv(FieldElement::ZERO), Err(NumericError::ZeroInverse));
        assert_eq!(m.sub(FieldElement(1), FieldElement(2)), FieldElement(p - 1));
    }

    #[test]
    fn mersenne_mul_matches_slow_reference() {
        // double-and-add reference, independent of the limb product
        fn slow(a: u128, b: u128) -> u128 {
            let p = MERSENNE_127;
            let (mut acc, mut x, mut y) = (0u128, a, b);
            while y > 0 {
                if y & 1 == 1 {
                    acc = (acc + x) % p;
                }
                x = (x << 1) % p;
                y >>= 1;
            }
            acc
        }
        let m = Modulus::mersenne127();
        let mut rng = ChaCha20Rng::seed_from_u64(7);
        for _ in 0..2000 {
            let a = m.random(&mut rng);
            let b = m.random(&mut rng);
            assert_eq!(m.mul(a, b).0, slow(a.0, b.0));
        }
        let top = FieldElement(MERSENNE_127 - 1);
        assert_eq!(m.mul(top, top), FieldElement::ONE);
    }

    #[test]
    fn small_modulus_and_compat() {
        let fp = FixedPoint::compat();
        assert_eq!(fp.modulus.value(), COMPAT_PRIME);
        assert_eq!(fp.decode(fp.encode(-2.75).unwrap()).unwrap(), -2.75);
        let m = fp.modulus;
        let a = FieldElement(987654321);
        assert_eq!(m.mul(a, m.inv(a).unwrap()), FieldElement::ONE);
        assert!(Modulus::new(100).is_err());
        assert!(Modulus::new((1u128 << 64) + 13).is_err());
        assert!(Modulus::new(1_000_000_007).is_ok());
    }

    #[test]
    fn params_validation() {
        let m = Modulus::mersenne127();
        assert!(FixedPointParams { k: 64, f: 21, kappa: 40 }.validate(&m).is_err());
        assert!(FixedPointParams { k: 64, f: 20, kappa: 70 }.validate(&m).is_err());
        assert!(FixedPointParams { k: 20, f: 20, kappa: 40 }.validate(&m).is_err());
        let compat = Modulus::new(COMPAT_PRIME).unwrap();
        assert!(FixedPointParams::default().validate(&compat).is_err());
        assert!(FixedPointParams::compat().validate(&compat).is_ok());
    }

    #[test]
    fn batch_inverse() {
        let m = Modulus::mersenne127();
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let xs: Vec<_> = (0..50).map(|_| m.random_nonzero(&mut rng)).collect();
        let inv = m.batch_inv(&xs).unwrap();
        for (x, i) in xs.iter().zip(&inv) {
            assert_eq!(m.mul(*x, *i), FieldElement::ONE);
        }
    }

    #[test]
    fn decimal_parsing() {
        let fp = fp();
        assert_eq!(fp.decimal_to_raw("-0.5").unwrap(), -524_288);
        assert_eq!(fp.decimal_to_raw("2").unwrap(), 2 * 1_048_576);
        assert_eq!(fp.decimal_to_raw(".25").unwrap(), 262_144);
        assert!(fp.decimal_to_raw("1e5").is_err());
        assert!(fp.decimal_to_raw("").is_err());
        assert!(fp.decimal_to_raw("-").is_err());
    }

    #[test]
    fn ring_properties_on_random_values() {
        let fp = fp();
        let m = fp.modulus;
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        for _ in 0..10_000 {
            let a = rng.random_range(-1_000_000i64..1_000_000) as f64 / 1024.0;
            let b = rng.random_range(-1_000_000i64..1_000_000) as f64 / 1024.0;
            let (ea, eb) = (fp.encode(a).unwrap(), fp.encode(b).unwrap());
            assert_eq!(fp.decode(ea).unwrap(), a);
            assert_eq!(m.add(ea, eb), fp.encode(a + b).unwrap());
            // double-scale product
            let prod = m.lift(m.mul(ea, eb));
            assert_eq!(prod, fp.to_raw(a).unwrap() * fp.to_raw(b).unwrap());
            assert_eq!(prod as f64, a * b * fp.scale() * fp.scale());
        }
    }
}
