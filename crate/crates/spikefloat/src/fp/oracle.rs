//! Host-side reference results for every circuit operation.
//!
//! Each oracle decodes the operand patterns exactly, performs the operation
//! in `f64`, and rounds once into the target format.  For every format here
//! (4, 11, and 24 significand bits) the double rounding through `f64`'s 53
//! bits is provably innocuous, so these are the correctly-rounded answers
//! — which the `Fp32` paths additionally cross-check against native `f32`
//! arithmetic in the test suite.

use crate::encoding::{decode_bits, round_to_format, PrecisionFormat};

pub fn oracle_add(format: PrecisionFormat, a: u64, b: u64) -> u64 {
    let x = decode_bits(format, a);
    let y = decode_bits(format, b);
    round_to_format(format, x + y)
}

pub fn oracle_mul(format: PrecisionFormat, a: u64, b: u64) -> u64 {
    let x = decode_bits(format, a);
    let y = decode_bits(format, b);
    round_to_format(format, x * y)
}

pub fn oracle_div(format: PrecisionFormat, a: u64, b: u64) -> u64 {
    let x = decode_bits(format, a);
    let y = decode_bits(format, b);
    round_to_format(format, x / y)
}

pub fn oracle_sqrt(format: PrecisionFormat, a: u64) -> u64 {
    let x = decode_bits(format, a);
    round_to_format(format, x.sqrt())
}

pub fn oracle_reciprocal(format: PrecisionFormat, a: u64) -> u64 {
    let x = decode_bits(format, a);
    round_to_format(format, 1.0 / x)
}

/// Correctly rounded reciprocal square root.  `1/sqrt(x)` composes two
/// roundings even through `f64`, so instead of trusting the double
/// rounding this oracle locates the answer exactly: an `f64` estimate
/// seeds a candidate pattern, integer comparisons of `sig^2 * sig_x`
/// against a power of two find the floor of the true value, and a
/// midpoint test decides the final rounding.  No ties exist (a midpoint
/// has an odd significand; squaring it can never divide a power of two).
pub fn oracle_rsqrt(format: PrecisionFormat, a: u64) -> u64 {
    let x = decode_bits(format, a);
    if x.is_nan() || x < 0.0 {
        return format.qnan();
    }
    if x == 0.0 {
        return format.infinity(x.is_sign_negative());
    }
    if x.is_infinite() {
        return 0;
    }

    let (sx, ex) = sig_exp(format, a);
    // sig^2 * sig_x <= 2^k, where k = -(2*e + ex) for a candidate of
    // exponent e; everything fits u128 for every supported format.
    let le_one = |s: u128, e: i64| -> bool {
        let t = s * s * sx as u128;
        let k = -(2 * e + ex);
        if k < 0 {
            false
        } else if k >= 127 {
            true
        } else {
            t <= 1u128 << k
        }
    };

    let est = round_to_format(format, 1.0 / x.sqrt());
    // Largest pattern at or below the true value, searched around the
    // estimate (the double-rounded estimate is within one pattern).
    let mut fl = None;
    for delta in [-2i64, -1, 0, 1, 2] {
        let cand = est as i64 + delta;
        if cand < 0 {
            continue;
        }
        let (sc, ec) = sig_exp(format, cand as u64);
        if le_one(sc as u128, ec) {
            fl = Some(cand as u64);
        }
    }
    let fl = fl.expect("floor candidate within the search ring");
    let (sf, ef) = sig_exp(format, fl);
    // Round up exactly when the midpoint above the floor is still at or
    // below the true value.
    if le_one(2 * sf as u128 + 1, ef - 1) {
        fl + 1
    } else {
        fl
    }
}

/// Integer significand and its scale: `pattern value = sig * 2^exp`.
fn sig_exp(format: PrecisionFormat, mag: u64) -> (u64, i64) {
    let m = format.man_bits() as i64;
    let bias = format.bias();
    let e = (mag >> format.man_bits()) & ((1 << format.exp_bits()) - 1);
    let man = mag & ((1u64 << format.man_bits()) - 1);
    if e == 0 {
        (man, 1 - bias - m)
    } else {
        (man | 1 << format.man_bits(), e as i64 - bias - m)
    }
}
