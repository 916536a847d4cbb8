//! Addition and multiplication datapaths, plus the IEEE comparison circuit.
//!
//! Both arithmetic paths unpack their operands, do exact integer work on
//! significands wide enough that nothing is lost before rounding, and hand
//! the result to [`norm_round_pack`].  Special values (NaN, infinities,
//! zeros) are resolved by priority selects wrapped around the finite path.

use crate::encoding::PrecisionFormat;
use crate::gate::{Builder, WireId, WIRE_FALSE};
use crate::word::{array_multiply, compare, mux_word, pg_carry_chain, shift_right_sticky, sub, BitWord};

use super::pack::{ew_add, ew_const, inf_word, norm_round_pack, qnan_word, unpack, EXP_OFFSET};

/// Floating-point addition on packed words.
///
/// The wider-magnitude operand anchors the datapath: the smaller significand
/// is aligned with a sticky-preserving right shift (all shifted-out value
/// collapses into the lowest kept bit), effective subtraction runs through
/// one conditionally-inverted adder, and the exact sum — wide enough to hold
/// the carry-out — is rounded once.
pub(crate) fn add_core(b: &mut Builder, format: PrecisionFormat, x: &BitWord, y: &BitWord) -> BitWord {
    let a = unpack(b, x, format);
    let c = unpack(b, y, format);

    // Magnitude ordering: exponent-and-mantissa compare as plain integers.
    let ord = compare(b, &a.magnitude, &c.magnitude);
    let swap = ord.lt;
    let sig_big = mux_word(b, swap, &c.sig, &a.sig);
    let sig_small = mux_word(b, swap, &a.sig, &c.sig);
    let ehat_big = mux_word(b, swap, &c.ehat, &a.ehat);
    let ehat_small = mux_word(b, swap, &a.ehat, &c.ehat);
    let sign_big = b.mux(swap, c.sign, a.sign);
    let eff_sub = b.xor(a.sign, c.sign);

    // Align the smaller significand.  Three extra bits below the
    // significand keep guard/round/sticky exact through the shift.
    let d = sub(b, &ehat_big, &ehat_small).0;
    let mut ext = vec![WIRE_FALSE; 3];
    ext.extend_from_slice(sig_big.bits());
    let big_ext = BitWord::new(ext);
    let mut ext = vec![WIRE_FALSE; 3];
    ext.extend_from_slice(sig_small.bits());
    let small_ext = BitWord::new(ext);
    let (small_aligned, dropped) = shift_right_sticky(b, &small_ext, &d);
    let mut jammed = small_aligned.bits().to_vec();
    jammed[0] = b.or(jammed[0], dropped);

    // One adder covers both effective operations: subtract = add the
    // one's complement with carry-in 1 (big >= small, so no borrow-out).
    let addend = BitWord::new(jammed.iter().map(|&w| b.xor(w, eff_sub)).collect());
    let (sum, carry) = pg_carry_chain(b, &big_ext, &addend, eff_sub);
    let is_add = b.not(eff_sub);
    let top = b.and(carry, is_add);
    let mut full = sum.bits().to_vec();
    full.push(top);
    let sum_full = BitWord::new(full);

    // Exact cancellation yields +0; otherwise the sign of the larger
    // magnitude survives.
    let nonzero = b.or_tree(sum_full.bits());
    let keep_sign = b.or(is_add, nonzero);
    let sign_res = b.and(sign_big, keep_sign);

    // The carry position sits one scale above the big significand's top bit.
    let e_off = ew_add(b, &ehat_big, &ew_const(EXP_OFFSET + 1));
    let packed = norm_round_pack(b, format, sign_res, &sum_full, &e_off, WIRE_FALSE);

    // Specials: NaN in, or infinities of opposite sign, beat everything;
    // then either infinity passes through with its own sign.
    let any_nan = b.or(a.is_nan, c.is_nan);
    let both_inf = b.and(a.is_inf, c.is_inf);
    let inf_clash = b.and(both_inf, eff_sub);
    let nan_case = b.or(any_nan, inf_clash);
    let inf_a = inf_word(format, a.sign);
    let inf_c = inf_word(format, c.sign);
    let r = mux_word(b, c.is_inf, &inf_c, &packed);
    let r = mux_word(b, a.is_inf, &inf_a, &r);
    let qn = qnan_word(format);
    mux_word(b, nan_case, &qn, &r)
}

/// Floating-point multiplication on packed words.
///
/// The significand product is exact (`2(m+1)` bits), so a single rounding
/// at the end is the only inexactness in the whole path.
pub(crate) fn mul_core(b: &mut Builder, format: PrecisionFormat, x: &BitWord, y: &BitWord) -> BitWord {
    let a = unpack(b, x, format);
    let c = unpack(b, y, format);
    let sign = b.xor(a.sign, c.sign);

    let prod = array_multiply(b, &a.sig, &c.sig);
    let e_sum = ew_add(b, &a.ehat, &c.ehat);
    // Product of two [1,2) significands tops out below 4: the product word's
    // highest bit sits one scale above the sum of the operand scales.
    let bias = format.bias() as u64;
    let e_off = ew_add(b, &e_sum, &ew_const(1 + EXP_OFFSET - bias));
    let packed = norm_round_pack(b, format, sign, &prod, &e_off, WIRE_FALSE);

    let any_nan = b.or(a.is_nan, c.is_nan);
    let zi = b.and(a.is_zero, c.is_inf);
    let iz = b.and(a.is_inf, c.is_zero);
    let zero_times_inf = b.or(zi, iz);
    let nan_case = b.or(any_nan, zero_times_inf);
    let any_inf = b.or(a.is_inf, c.is_inf);
    let inf_res = inf_word(format, sign);
    let r = mux_word(b, any_inf, &inf_res, &packed);
    let qn = qnan_word(format);
    mux_word(b, nan_case, &qn, &r)
}

/// IEEE comparison: `(lt, eq, gt)`, all false when either side is NaN,
/// with the two zeros comparing equal.
pub(crate) fn compare_core(
    b: &mut Builder,
    format: PrecisionFormat,
    x: &BitWord,
    y: &BitWord,
) -> (WireId, WireId, WireId) {
    let a = unpack(b, x, format);
    let c = unpack(b, y, format);
    let nan = b.or(a.is_nan, c.is_nan);
    let ordered = b.not(nan);
    let mag = compare(b, &a.magnitude, &c.magnitude);
    let both_zero = b.and(a.is_zero, c.is_zero);
    let some_mag = b.not(both_zero);
    let sign_diff = b.xor(a.sign, c.sign);

    let same_sign = b.not(sign_diff);
    let bits_eq = b.and(mag.eq, same_sign);
    let eq_raw = b.or(bits_eq, both_zero);
    let eq = b.and(ordered, eq_raw);

    // Differing signs: the negative side is smaller, unless both are zero.
    // Same sign: magnitude order, flipped when both are negative.
    let lt_diff = b.and(a.sign, some_mag);
    let gt_diff = b.and(c.sign, some_mag);
    let lt_same = b.mux(a.sign, mag.gt, mag.lt);
    let gt_same = b.mux(a.sign, mag.lt, mag.gt);
    let lt_sel = b.mux(sign_diff, lt_diff, lt_same);
    let gt_sel = b.mux(sign_diff, gt_diff, gt_same);
    let lt = b.and(ordered, lt_sel);
    let gt = b.and(ordered, gt_sel);
    (lt, eq, gt)
}

#[cfg(test)]
mod tests {
    use crate::encoding::{BitPlaneTensor, PrecisionFormat};
    use crate::fp::oracle;
    use crate::fp::{comparison_netlist, FpUnit};
    use crate::gate::BitMatrix;

    fn all_pairs() -> (Vec<u64>, Vec<u64>) {
        let mut xs = Vec::with_capacity(1 << 16);
        let mut ys = Vec::with_capacity(1 << 16);
        for a in 0..=0xFFu64 {
            for b in 0..=0xFFu64 {
                xs.push(a);
                ys.push(b);
            }
        }
        (xs, ys)
    }

    #[test]
    fn fp8_addition_exhaustive_matches_oracle() {
        let fmt = PrecisionFormat::Fp8E4M3;
        let unit = FpUnit::new();
        let (xs, ys) = all_pairs();
        let ta = BitPlaneTensor::from_bit_patterns(fmt, &xs).unwrap();
        let tb = BitPlaneTensor::from_bit_patterns(fmt, &ys).unwrap();
        let out = unit.fp_add(&ta, &tb).unwrap();
        for (i, got) in out.bit_patterns().iter().enumerate() {
            let want = oracle::oracle_add(fmt, xs[i], ys[i]);
            assert_eq!(
                *got, want,
                "{:#04x} + {:#04x}: got {got:#04x}, want {want:#04x}",
                xs[i], ys[i]
            );
        }
    }

    #[test]
    fn fp8_multiplication_exhaustive_matches_oracle() {
        let fmt = PrecisionFormat::Fp8E4M3;
        let unit = FpUnit::new();
        let (xs, ys) = all_pairs();
        let ta = BitPlaneTensor::from_bit_patterns(fmt, &xs).unwrap();
        let tb = BitPlaneTensor::from_bit_patterns(fmt, &ys).unwrap();
        let out = unit.fp_mul(&ta, &tb).unwrap();
        for (i, got) in out.bit_patterns().iter().enumerate() {
            let want = oracle::oracle_mul(fmt, xs[i], ys[i]);
            assert_eq!(
                *got, want,
                "{:#04x} * {:#04x}: got {got:#04x}, want {want:#04x}",
                xs[i], ys[i]
            );
        }
    }

    #[test]
    fn fp8_subtraction_via_sign_flip() {
        let fmt = PrecisionFormat::Fp8E4M3;
        let unit = FpUnit::new();
        let (xs, ys) = all_pairs();
        let ta = BitPlaneTensor::from_bit_patterns(fmt, &xs).unwrap();
        let tb = BitPlaneTensor::from_bit_patterns(fmt, &ys).unwrap();
        let out = unit.fp_sub(&ta, &tb).unwrap();
        for (i, got) in out.bit_patterns().iter().enumerate() {
            let want = oracle::oracle_add(fmt, xs[i], ys[i] ^ 0x80);
            assert_eq!(*got, want, "{:#04x} - {:#04x}", xs[i], ys[i]);
        }
    }

    #[test]
    fn comparison_follows_ieee_ordering() {
        let fmt = PrecisionFormat::Fp8E4M3;
        let net = comparison_netlist(fmt);
        let (xs, ys) = all_pairs();
        let ta = BitPlaneTensor::from_bit_patterns(fmt, &xs).unwrap();
        let tb = BitPlaneTensor::from_bit_patterns(fmt, &ys).unwrap();
        let inputs = ta.to_matrix().vstack(&tb.to_matrix()).unwrap();
        let out = net.eval(&inputs).unwrap();
        for i in 0..xs.len() {
            let x = crate::encoding::decode_bits(fmt, xs[i]);
            let y = crate::encoding::decode_bits(fmt, ys[i]);
            let want = (x < y, x == y, x > y);
            let got = (
                out.get(0, i) == 1,
                out.get(1, i) == 1,
                out.get(2, i) == 1,
            );
            assert_eq!(got, want, "{:#04x} vs {:#04x}", xs[i], ys[i]);
        }
    }

    /// Spike counting accumulates across operations and clears on demand.
    #[test]
    fn spike_accounting_accumulates() {
        let fmt = PrecisionFormat::Fp8E4M3;
        let unit = FpUnit::new();
        let a = BitPlaneTensor::from_bit_patterns(fmt, &[0x38, 0x40]).unwrap();
        let b = BitPlaneTensor::from_bit_patterns(fmt, &[0x3C, 0x44]).unwrap();
        assert_eq!(unit.spike_count(), 0);
        unit.fp_add(&a, &b).unwrap();
        let after_add = unit.spike_count();
        assert!(after_add > 0);
        unit.fp_mul(&a, &b).unwrap();
        assert!(unit.spike_count() > after_add);
        unit.clear_spike_count();
        assert_eq!(unit.spike_count(), 0);
    }

    /// Format/length mismatches and the encode-only 64-bit format error
    /// out instead of producing nonsense.
    #[test]
    fn unit_rejects_bad_operands() {
        let unit = FpUnit::new();
        let a8 = BitPlaneTensor::from_bit_patterns(PrecisionFormat::Fp8E4M3, &[0x38]).unwrap();
        let a16 = BitPlaneTensor::from_bit_patterns(PrecisionFormat::Fp16, &[0x3C00]).unwrap();
        assert!(unit.fp_add(&a8, &a16).is_err());
        let b8 = BitPlaneTensor::from_bit_patterns(PrecisionFormat::Fp8E4M3, &[0x38, 0x40]).unwrap();
        assert!(unit.fp_add(&a8, &b8).is_err());
        let a64 =
            BitPlaneTensor::from_bit_patterns(PrecisionFormat::Fp64, &[0x3FF0_0000_0000_0000])
                .unwrap();
        assert!(unit.fp_add(&a64, &a64).is_err());
    }

    /// The netlist input convention: matrix row `i` is encoding bit `i`
    /// (LSB first), so the sign bit rides in the last row.
    #[test]
    fn plane_order_round_trips() {
        let fmt = PrecisionFormat::Fp16;
        let t = BitPlaneTensor::from_bit_patterns(fmt, &[0x3C00, 0x8000, 0x7E00]).unwrap();
        let m: BitMatrix = t.to_matrix();
        assert_eq!(m.rows(), 16);
        assert_eq!(m.get(15, 1), 1); // sign bit of 0x8000, top row
        assert_eq!(m.get(15, 0), 0);
        assert_eq!(m.get(10, 0), 1); // exponent LSB of 0x3C00
        assert_eq!(m.get(0, 0), 0);
        let back = BitPlaneTensor::from_matrix(fmt, &m).unwrap();
        assert_eq!(back.bit_patterns(), vec![0x3C00, 0x8000, 0x7E00]);
    }
}
