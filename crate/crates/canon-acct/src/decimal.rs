//! Decimal rendering for exact rationals at the output boundary.
//!
//! Internal arithmetic stays rational; strings are produced only here, with
//! 4 significant digits and round-half-even.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, Zero};

const SIGNIFICANT_DIGITS: u32 = 4;

/// Renders `value` with 4 significant digits, round-half-even, in plain
/// positional notation (no exponent form).
pub fn decimal_string(value: &BigRational) -> String {
    if value.is_zero() {
        return "0.000".to_string();
    }
    let negative = value.is_negative();
    let abs = value.abs();

    // Scale so the rounded mantissa has exactly SIGNIFICANT_DIGITS digits:
    // mantissa * 10^-shift == abs.
    let mut shift = SIGNIFICANT_DIGITS as i64 - 1 - digit_gap(&abs);
    let mut mantissa = round_half_even_scaled(&abs, shift);
    let lo = BigInt::from(10u32.pow(SIGNIFICANT_DIGITS - 1));
    let hi = BigInt::from(10u32.pow(SIGNIFICANT_DIGITS));
    while mantissa >= hi {
        shift -= 1;
        mantissa = round_half_even_scaled(&abs, shift);
    }
    while mantissa < lo {
        shift += 1;
        mantissa = round_half_even_scaled(&abs, shift);
    }

    let digits = mantissa.to_string();
    let sign = if negative { "-" } else { "" };
    let body = if shift <= 0 {
        // Pure integer: pad with trailing zeros.
        format!("{digits}{}", "0".repeat((-shift) as usize))
    } else if (shift as usize) < digits.len() {
        let point = digits.len() - shift as usize;
        format!("{}.{}", &digits[..point], &digits[point..])
    } else {
        format!("0.{}{digits}", "0".repeat(shift as usize - digits.len()))
    };
    format!("{sign}{body}")
}

/// Renders the reduced fraction as `"num/den"`.
pub fn exact_string(value: &BigRational) -> String {
    format!("{}/{}", value.numer(), value.denom())
}

/// Rounds `abs * 10^shift` to the nearest integer, ties to even.
fn round_half_even_scaled(abs: &BigRational, shift: i64) -> BigInt {
    let mut numer = abs.numer().clone();
    let mut denom = abs.denom().clone();
    if shift >= 0 {
        numer *= BigInt::from(10u8).pow(shift as u32);
    } else {
        denom *= BigInt::from(10u8).pow((-shift) as u32);
    }
    let quotient = &numer / &denom;
    let remainder = &numer % &denom;
    let twice = &remainder * 2;
    if twice > denom || (twice == denom && &quotient % 2 == BigInt::one()) {
        quotient + 1
    } else {
        quotient
    }
}

/// Approximate decimal exponent: digits(numer) - digits(denom), which is
/// within 1 of floor(log10(abs)). The caller corrects by rescaling.
fn digit_gap(abs: &BigRational) -> i64 {
    let n = abs.numer().to_string().trim_start_matches('-').len() as i64;
    let d = abs.denom().to_string().len() as i64;
    n - d
}
