//! Secret-shared inverse square root that never overestimates.
//!
//! The input `x` is normalised to `x' * 2^exp` with `x'` in `[0.5, 1)`. The
//! factor `2^(-exp/2)` is built from the bits of `f - floor(exp/2)` with a
//! prefix product, corrected by `1/sqrt(2)` when `exp` is odd, and `1/sqrt(x')`
//! is approximated by `0.8277 x'^2 - 2.046 x' + 2.223` shifted down by a
//! margin of `0.0048`, which keeps the polynomial strictly below `1/sqrt(x')`
//! on the whole interval.
//!
//! Domain: `0 < x < 2^(2f)` in real terms. Parity of `exp` is taken on
//! `exp + f` (always positive; `f` is even so parity is unchanged).

use crate::mpc::{MpcError, Party, TruncMode};
use crate::numeric::{FieldElement, FixedPoint, NumericError};

pub const A2: &str = "0.8277";
pub const A1: &str = "2.046";
pub const A0: &str = "2.223";
pub const MARGIN: &str = "0.0048";

/// Exponent bits used for `f - floor(exp/2)`; covers values up to 63.
pub const EXP_BITS: u32 = 6;

/// Public constants at scale `2^f`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PolyCoefficients {
    pub a2: i128,
    pub a1: i128,
    /// `round(2.223 * 2^f) - round(0.0048 * 2^f)`.
    pub a0_minus_margin: i128,
    /// `round(2^f / sqrt(2))`.
    pub inv_sqrt2: i128,
}

impl PolyCoefficients {
    pub fn new(fp: &FixedPoint) -> Result<Self, NumericError> {
        let a0 = fp.decimal_to_raw(A0)?;
        let margin = fp.decimal_to_raw(MARGIN)?;
        Ok(PolyCoefficients {
            a2: fp.decimal_to_raw(A2)?,
            a1: fp.decimal_to_raw(A1)?,
            a0_minus_margin: a0 - margin,
            inv_sqrt2: round_sqrt_pow2(2 * fp.params.f - 1) as i128,
        })
    }

    /// Plaintext evaluation of the shifted polynomial in real arithmetic.
    pub fn eval_real(x: f64) -> f64 {
        0.8277 * x * x - 2.046 * x + 2.223 - 0.0048
    }
}

/// `round(sqrt(2^e))` computed exactly with integers.
pub fn round_sqrt_pow2(e: u32) -> u128 {
    let n: u128 = 1u128 << e;
    let mut s = (n as f64).sqrt() as u128;
    while s * s > n {
        s -= 1;
    }
    while (s + 1) * (s + 1) <= n {
        s += 1;
    }
    // round half up: compare (2s+1)^2 with 4n
    if (2 * s + 1) * (2 * s + 1) <= 4 * n {
        s + 1
    } else {
        s
    }
}

/// Shared intermediates of one batched evaluation.
#[derive(Clone, Debug)]
pub struct InvSqrtIntermediates {
    pub x_prime: Vec<FieldElement>,
    /// Integer scale (not fixed point).
    pub exp: Vec<FieldElement>,
    pub lsb: Vec<FieldElement>,
    /// `2^(-exp/2)` at fixed-point scale.
    pub pow_term: Vec<FieldElement>,
    pub poly: Vec<FieldElement>,
    pub output: Vec<FieldElement>,
}

/// Returns `(x', exp)` with `x = x' * 2^exp`, `x'` in `[0.5, 1)`.
pub fn normalize(party: &mut Party, x: &[FieldElement]) -> Result<(Vec<FieldElement>, Vec<FieldElement>), MpcError> {
    let fp = *party.fp();
    let m = fp.modulus;
    let (k, f) = (fp.params.k, fp.params.f);
    let width = (k - 1) as usize;
    let n = x.len();
    let bits = party.bit_dec(x, k - 1)?;
    let c = party.sufor(&bits)?;
    // b = 1 + sum_t 2^(k-2-t) (1 - c_t) = 2^(k-2-h) for the top set bit h
    let mut b = party.public_const(FieldElement::ONE, n);
    let mut sum_c = vec![FieldElement::ZERO; n];
    for (t, ct) in c.iter().enumerate() {
        let w = FieldElement(1u128 << (width - 1 - t));
        let one_minus = party.add_const(&party.neg(ct), FieldElement::ONE);
        for i in 0..n {
            b[i] = m.add(b[i], m.mul(w, one_minus[i]));
            sum_c[i] = m.add(sum_c[i], ct[i]);
        }
    }
    let bx = party.mul(&b, x)?;
    let x_prime = party.trunc_bits(&bx, k, k - f - 1, TruncMode::NearestRandom)?;
    let exp = party.add_const(&sum_c, m.neg(FieldElement(f as u128)));
    Ok((x_prime, exp))
}

/// Shares of `2^(-exp/2)` at scale `2^f`, plus the parity bit of `exp`.
pub fn pow2_neg_half_exp(
    party: &mut Party,
    exp: &[FieldElement],
    coeffs: &PolyCoefficients,
) -> Result<(Vec<FieldElement>, Vec<FieldElement>), MpcError> {
    let fp = *party.fp();
    let m = fp.modulus;
    let f = fp.params.f;
    let n = exp.len();
    let shifted = party.add_const(exp, FieldElement(f as u128));
    let lsb = party.mod2(&shifted)?;
    // exp - lsb is even, so multiplying by 2^-1 divides exactly
    let inv2 = m.inv(FieldElement(2))?;
    let half = party.mul_public(&party.sub(exp, &lsb)?, inv2);
    let e = party.add_const(&party.neg(&half), FieldElement(f as u128));
    let ebits = party.bit_dec(&e, EXP_BITS)?;
    let factors: Vec<Vec<FieldElement>> = ebits
        .iter()
        .enumerate()
        .map(|(t, bit)| {
            let scale = FieldElement((1u128 << (1u32 << t)) - 1);
            party.add_const(&party.mul_public(bit, scale), FieldElement::ONE)
        })
        .collect();
    let prefix = party.premulc(&factors)?;
    let pow_even = prefix.last().cloned().unwrap_or_else(|| vec![FieldElement::ZERO; n]);
    let scaled = party.mul_public(&pow_even, fp.from_raw(coeffs.inv_sqrt2));
    let pow_odd = party.trunc(&scaled, f, TruncMode::Floor)?;
    let pow = party.select(&lsb, &pow_even, &pow_odd)?;
    Ok((pow, lsb))
}

/// Horner evaluation of the shifted polynomial at `x'`.
pub fn poly_eval(party: &mut Party, x_prime: &[FieldElement], coeffs: &PolyCoefficients) -> Result<Vec<FieldElement>, MpcError> {
    let fp = *party.fp();
    let f = fp.params.f;
    let t1 = party.mul_public(x_prime, fp.from_raw(coeffs.a2));
    let t1 = party.trunc(&t1, f, TruncMode::NearestRandom)?;
    let t2 = party.add_const(&t1, fp.from_raw(-coeffs.a1));
    let t3 = party.mul(&t2, x_prime)?;
    let t3 = party.trunc(&t3, f, TruncMode::NearestRandom)?;
    Ok(party.add_const(&t3, fp.from_raw(coeffs.a0_minus_margin)))
}

/// Full evaluation keeping every intermediate.
pub fn inverse_sqrt_detailed(party: &mut Party, x: &[FieldElement]) -> Result<InvSqrtIntermediates, MpcError> {
    let fp = *party.fp();
    let coeffs = PolyCoefficients::new(&fp)?;
    party.observe("invsqrt.input", 0, x);
    let (x_prime, exp) = normalize(party, x)?;
    let (pow_term, lsb) = pow2_neg_half_exp(party, &exp, &coeffs)?;
    let poly = poly_eval(party, &x_prime, &coeffs)?;
    let prod = party.mul(&poly, &pow_term)?;
    let output = party.trunc(&prod, fp.params.f, TruncMode::Floor)?;
    Ok(InvSqrtIntermediates { x_prime, exp, lsb, pow_term, poly, output })
}

/// Shares of a value strictly below `1/sqrt(x)`.
pub fn inverse_sqrt(party: &mut Party, x: &[FieldElement]) -> Result<Vec<FieldElement>, MpcError> {
    Ok(inverse_sqrt_detailed(party, x)?.output)
}

/// Plaintext reference `1/sqrt(x)`.
pub fn inverse_sqrt_exact(x: f64) -> Result<f64, NumericError> {
    if !(x > 0.0) || !x.is_finite() {
        return Err(NumericError::OutOfRange { value: x, bound_bits: 0 });
    }
    Ok(1.0 / x.sqrt())
}
