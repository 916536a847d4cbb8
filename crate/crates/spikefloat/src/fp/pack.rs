//! Shared IEEE-754 packing machinery: operand unpacking, and the
//! normalize → round-to-nearest-even → pack block every arithmetic pipeline
//! funnels through.
//!
//! All exponent bookkeeping runs in 11-bit words offset by [`EXP_OFFSET`]
//! so that intermediate exponents (which dip below zero and climb past the
//! format maximum mid-pipeline) stay representable as unsigned words.

use crate::encoding::PrecisionFormat;
use crate::gate::{Builder, WireId, WIRE_FALSE};
use crate::word::{
    compare, const_word, inc, leading_zero_count, mask, mux_word, pg_carry_chain,
    shift_left, shift_right_sticky, sub, sub_saturate, BitWord,
};

/// Width of the internal exponent words.
pub(crate) const EXP_WIDTH: usize = 11;
/// Bias added to every internal exponent so the words stay unsigned.
pub(crate) const EXP_OFFSET: u64 = 512;

pub(crate) fn ew_const(b: u64) -> BitWord {
    const_word(b, EXP_WIDTH)
}

pub(crate) fn ew_add(b: &mut Builder, x: &BitWord, y: &BitWord) -> BitWord {
    pg_carry_chain(b, &x.zext(EXP_WIDTH), &y.zext(EXP_WIDTH), WIRE_FALSE).0
}

pub(crate) fn ew_sub(b: &mut Builder, x: &BitWord, y: &BitWord) -> BitWord {
    sub(b, &x.zext(EXP_WIDTH), &y.zext(EXP_WIDTH)).0
}

/// A floating-point operand split into circuit fields, with the
/// classification wires every pipeline needs.
#[derive(Debug, Clone)]
pub struct FpOperand {
    pub format: PrecisionFormat,
    pub sign: WireId,
    /// Raw biased exponent field.
    pub exponent: BitWord,
    /// Raw mantissa field (no hidden bit).
    pub mantissa: BitWord,
    /// Mantissa with the hidden bit made explicit on top (`man_bits + 1`).
    pub sig: BitWord,
    /// Exponent clamped to at least 1 — the scale denormals actually use.
    pub ehat: BitWord,
    /// Exponent-and-mantissa as one unsigned magnitude word.
    pub magnitude: BitWord,
    pub is_nan: WireId,
    pub is_inf: WireId,
    pub is_zero: WireId,
}

/// Split a packed word into fields and classification wires.
pub(crate) fn unpack(b: &mut Builder, word: &BitWord, format: PrecisionFormat) -> FpOperand {
    let w = format.bit_width();
    let m = format.man_bits();
    let e = format.exp_bits();
    assert_eq!(word.width(), w, "operand width");
    let sign = word.bit(w - 1);
    let mantissa = word.slice(0, m);
    let exponent = word.slice(m, m + e);
    let exp_nz = b.or_tree(exponent.bits());
    let hidden = exp_nz;
    let mut sig_bits = mantissa.bits().to_vec();
    sig_bits.push(hidden);
    let ez = b.not(exp_nz);
    let mut ehat_bits = exponent.bits().to_vec();
    ehat_bits[0] = b.or(ehat_bits[0], ez);
    let exp_all_ones = b.and_tree(exponent.bits());
    let man_nz = b.or_tree(mantissa.bits());
    let is_nan = b.and(exp_all_ones, man_nz);
    let man_z = b.not(man_nz);
    let is_inf = b.and(exp_all_ones, man_z);
    let magnitude = word.slice(0, w - 1);
    let mag_nz = b.or_tree(magnitude.bits());
    let is_zero = b.not(mag_nz);
    FpOperand {
        format,
        sign,
        exponent,
        mantissa,
        sig: BitWord::new(sig_bits),
        ehat: BitWord::new(ehat_bits),
        magnitude,
        is_nan,
        is_inf,
        is_zero,
    }
}

/// The only rounding mode the circuits implement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RoundingMode {
    #[default]
    NearestEven,
}

/// The bits round-to-nearest-even needs once the significand is
/// normalized: guard (first bit below the result's LSB), round (second),
/// and sticky (OR of everything further down plus everything previously
/// shifted out).
#[derive(Debug, Clone, Copy)]
pub struct RoundingContext {
    pub mode: RoundingMode,
    pub guard: WireId,
    pub round: WireId,
    pub sticky: WireId,
}

impl RoundingContext {
    /// Nearest-even increment decision given the result's LSB.
    pub fn round_up(&self, b: &mut Builder, lsb: WireId) -> WireId {
        let RoundingMode::NearestEven = self.mode;
        let low_half = b.or(self.round, self.sticky);
        let tie_or_up = b.or(low_half, lsb);
        b.and(self.guard, tie_or_up)
    }
}

/// Normalize, round to nearest-even, and pack a finite intermediate result.
///
/// `sig` carries `k` significand bits and `e_off` the internal exponent of
/// bit `k-1` (the position, not the value: magnitude = `sig · 2^(e_off -
/// EXP_OFFSET - bias - (k-1))`).  The block left-normalizes as far as the
/// exponent floor allows, right-shifts below the floor into the denormal
/// range (capturing shifted-out bits as sticky), rounds, and assembles the
/// final word — including the overflow-to-infinity case.  `sticky_in` ORs
/// any inexactness the caller already knows about into the rounding
/// decision.
pub(crate) fn norm_round_pack(
    b: &mut Builder,
    format: PrecisionFormat,
    sign: WireId,
    sig: &BitWord,
    e_off: &BitWord,
    sticky_in: WireId,
) -> BitWord {
    let k = sig.width();
    let m = format.man_bits();
    let e = format.exp_bits();
    assert!(k >= m + 3, "significand needs guard/round/sticky room");
    assert_eq!(e_off.width(), EXP_WIDTH);

    // Left-normalize, but never push the top-bit exponent below the minimum
    // normal scale (EXP_OFFSET + 1).
    let lz = leading_zero_count(b, sig);
    let lz_ext = lz.zext(EXP_WIDTH);
    let room = sub_saturate(b, e_off, &ew_const(EXP_OFFSET + 1));
    let lz_over = compare(b, &room, &lz_ext);
    let shift_amount = mux_word(b, lz_over.lt, &room, &lz_ext);
    let sig1 = shift_left(b, sig, &shift_amount);
    let e1 = sub(b, e_off, &shift_amount).0;

    // Below the minimum normal scale, shift right into the denormal frame.
    let right = sub_saturate(b, &ew_const(EXP_OFFSET + 1), &e1);
    let (sig2, shifted_out) = shift_right_sticky(b, &sig1, &right);
    let denormal_frame = b.or_tree(right.bits());
    let e2 = mux_word(b, denormal_frame, &ew_const(EXP_OFFSET + 1), &e1);

    // Round to nearest even.
    let with_hidden = sig2.slice(k - 1 - m, k);
    let lsb = sig2.bit(k - 1 - m);
    let below = b.or_tree(&sig2.bits()[0..k - 3 - m]);
    let shift_sticky = b.or(below, shifted_out);
    let ctx = RoundingContext {
        mode: RoundingMode::NearestEven,
        guard: sig2.bit(k - 2 - m),
        round: sig2.bit(k - 3 - m),
        sticky: b.or(shift_sticky, sticky_in),
    };
    let up = ctx.round_up(b, lsb);
    let (rounded, carry) = inc(b, &with_hidden, up);
    let hidden_final = b.or(rounded.bit(m), carry);
    let man_final = rounded.slice(0, m);
    let e3 = inc(b, &e2, carry).0;

    // Assemble: denormals keep exponent field zero; overflow goes to
    // infinity.
    let e_raw = sub(b, &e3, &ew_const(EXP_OFFSET)).0;
    let exp_field = mask(b, hidden_final, &e_raw.slice(0, e));
    let max_field = (1u64 << e) - 1;
    let ovf_cmp = compare(b, &e3, &ew_const(EXP_OFFSET + max_field));
    let too_big = b.or(ovf_cmp.gt, ovf_cmp.eq);
    let overflow = b.and(hidden_final, too_big);

    let mut packed = man_final.bits().to_vec();
    packed.extend_from_slice(exp_field.bits());
    let inf = infinity_bits(format);
    let keep = b.not(overflow);
    let mut out: Vec<WireId> = packed
        .iter()
        .zip(inf)
        .map(|(&bit, inf_bit)| {
            if inf_bit {
                b.or(overflow, bit)
            } else {
                b.and(keep, bit)
            }
        })
        .collect();
    out.push(sign);
    BitWord::new(out)
}

/// Magnitude bit pattern of infinity, LSB first, without the sign.
fn infinity_bits(format: PrecisionFormat) -> Vec<bool> {
    let m = format.man_bits();
    let e = format.exp_bits();
    (0..m + e).map(|i| i >= m).collect()
}

/// Constant packed word for the format's canonical quiet NaN.
pub(crate) fn qnan_word(format: PrecisionFormat) -> BitWord {
    const_word(format.qnan(), format.bit_width())
}

/// ±Infinity with a wire-selected sign.
pub(crate) fn inf_word(format: PrecisionFormat, sign: WireId) -> BitWord {
    let mut bits = const_word(format.infinity(false), format.bit_width())
        .bits()
        .to_vec();
    let w = format.bit_width();
    bits[w - 1] = sign;
    BitWord::new(bits)
}

/// ±Zero with a wire-selected sign.
pub(crate) fn zero_word(format: PrecisionFormat, sign: WireId) -> BitWord {
    let mut bits = vec![WIRE_FALSE; format.bit_width()];
    bits[format.bit_width() - 1] = sign;
    BitWord::new(bits)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pack_netlist(format: PrecisionFormat, k: usize) -> crate::gate::Netlist {
        let mut b = Builder::new();
        let sign = b.input();
        let sig = BitWord::new(b.inputs(k));
        let e_off = BitWord::new(b.inputs(EXP_WIDTH));
        let sticky = b.input();
        let out = norm_round_pack(&mut b, format, sign, &sig, &e_off, sticky);
        b.finish(out.bits())
    }

    fn run_pack(net: &crate::gate::Netlist, k: usize, sign: u64, sig: u64, e_off: u64, st: u64) -> u64 {
        let word = sign | (sig << 1) | (e_off << (1 + k)) | (st << (1 + k + EXP_WIDTH));
        let m = crate::gate::BitMatrix::from_words(2 + k + EXP_WIDTH, &[word]);
        net.eval(&m).unwrap().to_words()[0]
    }

    /// Host mirror: round `sig * 2^(e_off - EXP_OFFSET - bias - (k-1))` with
    /// the sign applied, through the host-side format rounding.
    fn host_pack(format: PrecisionFormat, sign: u64, sig: u64, e_off: i64, k: usize, sticky: bool) -> u64 {
        let bias = format.bias();
        let exp = e_off - EXP_OFFSET as i64 - bias - (k as i64 - 1);
        let mut v = sig as f64 * (2.0f64).powi(exp as i32);
        if sticky && v != 0.0 {
            // Nudge strictly toward larger magnitude by less than half an
            // ULP of the significand so ties break away from even.
            v *= 1.0 + 1e-14;
        } else if sticky {
            v = (2.0f64).powi(-300);
        }
        let bits = crate::encoding::round_to_format(format, if sign == 1 { -v } else { v });
        bits
    }

    #[test]
    fn packs_simple_normals() {
        let fmt = PrecisionFormat::Fp8E4M3;
        let k = 8;
        let net = pack_netlist(fmt, k);
        // sig = 0b10110000 with top bit at internal exponent e.
        for e in [1u64, 3, 7, 10, 14] {
            let got = run_pack(&net, k, 0, 0b1011_0000, EXP_OFFSET + e, 0);
            let want = host_pack(fmt, 0, 0b1011_0000, (EXP_OFFSET + e) as i64, k, false);
            assert_eq!(got, want, "e={e}");
        }
    }

    #[test]
    fn rounds_to_nearest_even_with_sticky() {
        let fmt = PrecisionFormat::Fp8E4M3;
        let k = 8;
        let net = pack_netlist(fmt, k);
        for sig in [0b1000_1000u64, 0b1001_1000, 0b1000_1001, 0b1111_1111, 0b0001_0110] {
            for st in [0u64, 1] {
                for e in [2u64, 6, 12] {
                    let got = run_pack(&net, k, 0, sig, EXP_OFFSET + e, st);
                    let want = host_pack(fmt, 0, sig, (EXP_OFFSET + e) as i64, k, st == 1);
                    assert_eq!(got, want, "sig={sig:#010b} st={st} e={e}");
                }
            }
        }
    }

    #[test]
    fn denormals_overflow_and_zero() {
        let fmt = PrecisionFormat::Fp8E4M3;
        let k = 8;
        let net = pack_netlist(fmt, k);
        // Deep denormal range, overflow range, and exact zero.
        for (sig, e_off) in [
            (0b1000_0000u64, EXP_OFFSET - 4),
            (0b1100_0000, EXP_OFFSET - 1),
            (0b1010_1010, EXP_OFFSET + 20),
            (0b1111_1110, EXP_OFFSET + 15),
            (0, EXP_OFFSET + 5),
        ] {
            for sign in [0u64, 1] {
                let got = run_pack(&net, k, sign, sig, e_off, 0);
                let want = host_pack(fmt, sign, sig, e_off as i64, k, false);
                assert_eq!(got, want, "sig={sig:#010b} e_off={e_off} sign={sign}");
            }
        }
    }

    #[test]
    fn fp16_cross_section_matches_host() {
        let fmt = PrecisionFormat::Fp16;
        let k = 16;
        let net = pack_netlist(fmt, k);
        let mut state = 0x2545f4914f6cdd1du64;
        for _ in 0..300 {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            let sig = state & 0xFFFF;
            let e_off = EXP_OFFSET - 12 + (state >> 32) % 48;
            let sign = (state >> 60) & 1;
            let got = run_pack(&net, k, sign, sig, e_off, 0);
            let want = host_pack(fmt, sign, sig, e_off as i64, k, false);
            assert_eq!(got, want, "sig={sig:#x} e_off={e_off}");
        }
    }
}
