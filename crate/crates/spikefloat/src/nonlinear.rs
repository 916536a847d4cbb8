//! Transcendental operators — exp, sigmoid, tanh, SiLU, GELU, sin/cos, and
//! softmax — composed from the floating-point circuits in [`crate::fp`].
//!
//! None of these are approximated at the tensor level: every operator is a
//! fixed sequence of FP32 circuit evaluations (multiplies, adds, divides)
//! plus a handful of small bit-manipulation netlists for the steps ordinary
//! arithmetic cannot express (extracting the reduction quotient from a
//! shifted significand, adding an integer to an exponent field, quadrant
//! swaps).  Because the arithmetic circuits are bit-exact IEEE-754, the
//! whole composition is reproducible on the host: for each operator there
//! is a `reference_*` function that replays the identical sequence of f32
//! operations, and the circuit output matches it bit for bit.
//!
//! The polynomial coefficients and range-reduction constants are frozen as
//! hex bit patterns in `data/poly_coeffs.txt` (checksummed at load); they
//! are data, not something re-derived from decimal literals at run time.
//!
//! Exponential: `x` is clamped to `[-110, 90]` (beyond which the result
//! saturates to `0`/`+inf` anyway), the quotient `k = round(x / ln 2)` is
//! produced by the shift-and-round trick — adding `1.5 * 2^23` forces the
//! integer into the low mantissa bits — the remainder `r = x - k*ln2` comes
//! from a two-constant multiply-subtract cascade, a degree-6 polynomial
//! evaluates `e^r`, and a packing netlist adds `k` into the exponent field
//! with full denormal/overflow handling.
//!
//! Sine/cosine: the same shift-and-round trick against `2/pi` yields the
//! quadrant count `k`; `x - k*(pi/2)` is accumulated with the quotient
//! split into an 8-bit low part and a multiple of 256 so that every product
//! against the 12-bit pi/2 chunks is exact, and the running remainder is
//! kept as an unevaluated two-term sum (a compensated cascade) so the
//! subtraction stays accurate even when `x` lies within `2^-27` of a
//! multiple of pi/2.  Odd/even polynomials evaluate sin and cos on the
//! reduced argument and a quadrant netlist swaps and flips signs.

use std::cell::RefCell;
use std::collections::HashMap;
use std::rc::Rc;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::encoding::{round_to_format, BitPlaneTensor, PrecisionFormat};
use crate::fp::pack::{
    ew_add, ew_const, inf_word, norm_round_pack, qnan_word, unpack, zero_word, EXP_OFFSET,
};
use crate::fp::pipeline::compare_core;
use crate::fp::{FpError, FpUnit};
use crate::gate::{Builder, Netlist, WIRE_FALSE, WIRE_TRUE};
use crate::word::{
    const_word, inc, leading_zero_count, mask, mux_word, not_word, shift_left, sub, BitWord,
};

/// Raw contents of the frozen coefficient table.
const COEFF_TABLE: &str = include_str!("../data/poly_coeffs.txt");

/// SHA-256 of `data/poly_coeffs.txt`.  Checked when the table is first
/// parsed so a corrupted or regenerated file cannot silently change the
/// numerics.
pub const COEFF_TABLE_SHA256: &str =
    "26c118e1dda63d33ac3d5443548eab6b65602536602da860d623376f5ea0fe08";

fn coeff_table() -> &'static HashMap<&'static str, u32> {
    static TABLE: OnceLock<HashMap<&'static str, u32>> = OnceLock::new();
    TABLE.get_or_init(|| {
        let digest = Sha256::digest(COEFF_TABLE.as_bytes());
        let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
        assert_eq!(
            hex, COEFF_TABLE_SHA256,
            "coefficient table does not match its pinned checksum"
        );
        let mut map = HashMap::new();
        for line in COEFF_TABLE.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts = line.split_whitespace();
            let name = parts.next().expect("coefficient name");
            let value = parts.next().expect("coefficient value");
            let value = value
                .strip_prefix("0x")
                .expect("coefficient values are hex bit patterns");
            let bits = u32::from_str_radix(value, 16).expect("valid hex");
            map.insert(name, bits);
        }
        map
    })
}

fn coeff(name: &str) -> u32 {
    *coeff_table()
        .get(name)
        .unwrap_or_else(|| panic!("missing coefficient {name}"))
}

/// Range-reduction constants for the exponential: `ln 2` split so that
/// `k * ln2_hi` is exact for every reachable quotient, plus `1 / ln 2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RangeReductionConstants {
    pub ln2_hi: u32,
    pub ln2_lo: u32,
    pub inv_ln2: u32,
}

/// A fixed polynomial: FP32 coefficient bit patterns (constant term first),
/// the total degree of the approximation, and the reduction constants it is
/// evaluated under.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolynomialSpec {
    pub coefficients: Vec<u32>,
    pub degree: usize,
    pub range_reduction_constants: RangeReductionConstants,
}

impl PolynomialSpec {
    /// The degree-6 polynomial for `e^r` on `|r| <= ln2/2`, in the form
    /// `e^r = 1 + r*(q0 + q1*r + ... + q5*r^5)`.
    pub fn exponential() -> Self {
        PolynomialSpec {
            coefficients: vec![
                coeff("EXP_Q0"),
                coeff("EXP_Q1"),
                coeff("EXP_Q2"),
                coeff("EXP_Q3"),
                coeff("EXP_Q4"),
                coeff("EXP_Q5"),
            ],
            degree: 6,
            range_reduction_constants: RangeReductionConstants {
                ln2_hi: coeff("EXP_LN2_HI"),
                ln2_lo: coeff("EXP_LN2_LO"),
                inv_ln2: coeff("EXP_INV_LN2"),
            },
        }
    }
}

/// `sin r = r*(1 + u*(s0 + s1*u + s2*u^2 + s3*u^3))` with `u = r^2`.
pub fn sine_coefficients() -> [u32; 4] {
    [
        coeff("SIN_S0"),
        coeff("SIN_S1"),
        coeff("SIN_S2"),
        coeff("SIN_S3"),
    ]
}

/// `cos r = 1 + c0*u + c1*u^2 + c2*u^3 + c3*u^4` with `u = r^2`, evaluated
/// as `1 + u*(c0 + c1*u + ...)`.
pub fn cosine_coefficients() -> [u32; 4] {
    [
        coeff("COS_C0"),
        coeff("COS_C1"),
        coeff("COS_C2"),
        coeff("COS_C3"),
    ]
}

/// `pi/2` split into four descending parts; the first three carry 12
/// significand bits each so products with 8-bit integers stay exact.
pub fn pi_over_two_chunks() -> [u32; 4] {
    [
        coeff("PIO2_1"),
        coeff("PIO2_2"),
        coeff("PIO2_3"),
        coeff("PIO2_4"),
    ]
}

/// `2/pi`, used to compute the quadrant count.
pub fn two_over_pi_bits() -> u32 {
    coeff("TWO_OVER_PI")
}

/// `1.5 * 2^23` — adding it to a value below `2^22` leaves `round(value)`
/// in the low mantissa bits.
pub fn round_magic_bits() -> u32 {
    coeff("ROUND_MAGIC")
}

// Clamp bounds for the exponential argument.  exp(-110) underflows to zero
// and exp(90) overflows to infinity with slack on both sides, so clamping
// changes no finite result; it only bounds the quotient so the extracted
// integer fits in ten bits.
const EXP_CLAMP_LO_BITS: u32 = 0xC2DC_0000; // -110.0
const EXP_CLAMP_HI_BITS: u32 = 0x42B4_0000; // 90.0

/// The supported reduction range for sin/cos: `2*pi*10^4` rounded to FP32.
/// Inputs beyond it are clamped (the quadrant count would overflow its
/// 17-bit field), so results degrade gracefully instead of wrapping.
pub const SINCOS_RANGE_BITS: u32 = 0x4775_6FDA; // 62831.852

const GELU_SCALE_BITS: u32 = 0x3FD9_DB23; // 1.702
const ONE_BITS: u32 = 0x3F80_0000;
const TWO_BITS: u32 = 0x4000_0000;
const SIGN_MASK: u32 = 0x8000_0000;

#[derive(Debug, Error)]
pub enum NonlinearError {
    #[error("nonlinear operators run at fp32, got {0}")]
    UnsupportedFormat(&'static str),
    #[error("softmax row must hold at least one element")]
    EmptyRow,
    #[error("tensor of {len} lanes does not split into rows of {width}")]
    RaggedRows { len: usize, width: usize },
    #[error(transparent)]
    Fp(#[from] FpError),
}

/// The auxiliary (non-arithmetic) netlists the operators need.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum AuxOp {
    /// Replace values above `hi` with `hi` and below `lo` with `lo`;
    /// NaN passes through (IEEE comparisons are all false on NaN).
    Clamp { lo: u32, hi: u32 },
    /// Combine the shifted quotient word `y`, and `e^r`, into
    /// `e^r * 2^k` — the integer add into the exponent field — with
    /// NaN/infinity of the original argument overriding the result.
    ExpScale,
    /// Convert the low eight mantissa bits of a word to the FP32 value of
    /// that signed integer (used to split the reduction quotient exactly).
    LowByteToFloat,
    /// Quadrant fixup for sin/cos: swap, flip signs, pass `sin(+-0) = +-0`
    /// through exactly, and force NaN on NaN/infinite arguments.
    SincosFixup,
    /// `max(m, x)`: `x` when `x > m`, otherwise `m` (so NaN never wins).
    Maximum,
}

fn f32_const_word(bits: u32) -> BitWord {
    const_word(bits as u64, 32)
}

fn clamp_netlist(lo: u32, hi: u32) -> Netlist {
    let mut b = Builder::new();
    let x = BitWord::new(b.inputs(32));
    let hi_w = f32_const_word(hi);
    let lo_w = f32_const_word(lo);
    let (_, _, gt) = compare_core(&mut b, PrecisionFormat::Fp32, &x, &hi_w);
    let capped = mux_word(&mut b, gt, &hi_w, &x);
    let (lt, _, _) = compare_core(&mut b, PrecisionFormat::Fp32, &capped, &lo_w);
    let out = mux_word(&mut b, lt, &lo_w, &capped);
    b.finish(out.bits())
}

/// Inputs: original argument `x`, shifted quotient word `y`, and `e^r`.
/// Output: `e^r * 2^k` where `k` is the signed 10-bit integer in the low
/// mantissa bits of `y`, packed through the standard normalize/round path
/// so denormal underflow and overflow to infinity behave exactly as IEEE
/// multiplication by `2^k` would.
fn exp_scale_netlist() -> Netlist {
    let fmt = PrecisionFormat::Fp32;
    let mut b = Builder::new();
    let x = BitWord::new(b.inputs(32));
    let y = BitWord::new(b.inputs(32));
    let er = BitWord::new(b.inputs(32));
    let xo = unpack(&mut b, &x, fmt);
    let ero = unpack(&mut b, &er, fmt);

    // k sits two's-complement in the low ten mantissa bits of y (the
    // clamp keeps |k| <= 159, well inside the signed 10-bit range).
    let k10 = y.slice(0, 10);
    let mut k11 = k10.bits().to_vec();
    k11.push(k10.bit(9));
    let k11 = BitWord::new(k11);

    // e^r is always normal (it lies in [0.68, 1.43]), so its clamped
    // exponent is the real one; adding k and re-biasing into the internal
    // exponent frame stays within [478, 770] — no wraparound.
    let e1 = ew_add(&mut b, &ero.ehat, &k11);
    let e_off = ew_add(&mut b, &e1, &ew_const(EXP_OFFSET));
    let mut sig = vec![WIRE_FALSE, WIRE_FALSE];
    sig.extend_from_slice(ero.mantissa.bits());
    sig.push(WIRE_TRUE);
    let sig = BitWord::new(sig);
    let packed = norm_round_pack(&mut b, fmt, WIRE_FALSE, &sig, &e_off, WIRE_FALSE);

    let pos = b.not(xo.sign);
    let inf_pos = b.and(xo.is_inf, pos);
    let inf_neg = b.and(xo.is_inf, xo.sign);
    let zero = zero_word(fmt, WIRE_FALSE);
    let inf = inf_word(fmt, WIRE_FALSE);
    let qnan = qnan_word(fmt);
    let out = mux_word(&mut b, inf_neg, &zero, &packed);
    let out = mux_word(&mut b, inf_pos, &inf, &out);
    let out = mux_word(&mut b, xo.is_nan, &qnan, &out);
    b.finish(out.bits())
}

/// Input: the shifted quotient word `y`.  Output: the FP32 encoding of the
/// signed integer in its low eight mantissa bits (-128..=127).  Keeping the
/// low part signed keeps the high part within 128 of the full quotient, so
/// the first cascade subtraction never overshoots the argument.
fn low_byte_to_float_netlist() -> Netlist {
    let mut b = Builder::new();
    let y = BitWord::new(b.inputs(32));
    let v = y.slice(0, 8);
    let sign = v.bit(7);
    let inverted = not_word(&mut b, &v);
    let (negated, _) = inc(&mut b, &inverted, WIRE_TRUE);
    let mag = mux_word(&mut b, sign, &negated, &v);
    let nz = b.or_tree(mag.bits());
    let lz = leading_zero_count(&mut b, &mag);
    let shifted = shift_left(&mut b, &mag, &lz);
    // Exponent field 134 - lz encodes 2^(7 - lz); zero maps to all-zero.
    let e8 = sub(&mut b, &const_word(134, 8), &lz.zext(8)).0;
    let ef = mask(&mut b, nz, &e8);
    let mut out = vec![WIRE_FALSE; 16];
    out.extend_from_slice(&shifted.bits()[0..7]);
    out.extend_from_slice(ef.bits());
    out.push(sign);
    b.finish(&out)
}

/// Inputs: original argument `x`, quotient word `y`, and the two
/// polynomial values `sin r` and `cos r`.  Outputs: `sin x` then `cos x`
/// (64 planes), rotated by the quadrant `k mod 4` held in the low bits of
/// `y`:
///
/// | quadrant | sin     | cos     |
/// |----------|---------|---------|
/// | 0        | `s`     | `c`     |
/// | 1        | `c`     | `-s`    |
/// | 2        | `-s`    | `-c`    |
/// | 3        | `-c`    | `s`     |
fn sincos_fixup_netlist() -> Netlist {
    let fmt = PrecisionFormat::Fp32;
    let mut b = Builder::new();
    let x = BitWord::new(b.inputs(32));
    let y = BitWord::new(b.inputs(32));
    let s = BitWord::new(b.inputs(32));
    let c = BitWord::new(b.inputs(32));
    let xo = unpack(&mut b, &x, fmt);

    let q0 = y.bit(0);
    let q1 = y.bit(1);
    let sin_base = mux_word(&mut b, q0, &c, &s);
    let cos_base = mux_word(&mut b, q0, &s, &c);
    let cos_flip = b.xor(q1, q0);
    let flip = |b: &mut Builder, w: &BitWord, f| {
        let mut bits = w.bits().to_vec();
        bits[31] = b.xor(bits[31], f);
        BitWord::new(bits)
    };
    let sin_rot = flip(&mut b, &sin_base, q1);
    let cos_rot = flip(&mut b, &cos_base, cos_flip);

    // sin(+-0) is the argument itself and cos(+-0) is exactly one; the
    // compensated cascade would otherwise lose the sign of -0.
    let one = f32_const_word(ONE_BITS);
    let sin_z = mux_word(&mut b, xo.is_zero, &x, &sin_rot);
    let cos_z = mux_word(&mut b, xo.is_zero, &one, &cos_rot);

    let undef = b.or(xo.is_nan, xo.is_inf);
    let qnan = qnan_word(fmt);
    let sin_out = mux_word(&mut b, undef, &qnan, &sin_z);
    let cos_out = mux_word(&mut b, undef, &qnan, &cos_z);
    let mut outs = sin_out.bits().to_vec();
    outs.extend_from_slice(cos_out.bits());
    b.finish(&outs)
}

fn maximum_netlist() -> Netlist {
    let mut b = Builder::new();
    let m = BitWord::new(b.inputs(32));
    let x = BitWord::new(b.inputs(32));
    let (lt, _, _) = compare_core(&mut b, PrecisionFormat::Fp32, &m, &x);
    let out = mux_word(&mut b, lt, &x, &m);
    b.finish(out.bits())
}

fn build_aux(op: AuxOp) -> Netlist {
    match op {
        AuxOp::Clamp { lo, hi } => clamp_netlist(lo, hi),
        AuxOp::ExpScale => exp_scale_netlist(),
        AuxOp::LowByteToFloat => low_byte_to_float_netlist(),
        AuxOp::SincosFixup => sincos_fixup_netlist(),
        AuxOp::Maximum => maximum_netlist(),
    }
}

fn splat(bits: u32, n: usize) -> BitPlaneTensor {
    BitPlaneTensor::splat(PrecisionFormat::Fp32, bits as u64, n)
}

/// Sign-plane flip: negation at the encoding level, no arithmetic.
fn negate(t: &BitPlaneTensor) -> Result<BitPlaneTensor, NonlinearError> {
    let patterns: Vec<u64> = t
        .bit_patterns()
        .iter()
        .map(|&p| p ^ SIGN_MASK as u64)
        .collect();
    Ok(BitPlaneTensor::from_bit_patterns(t.format(), &patterns)
        .map_err(FpError::from)?)
}

/// Transcendental execution unit: owns the floating-point unit it composes
/// and the auxiliary bit-manipulation netlists, so spike counts cover the
/// whole decomposition.
pub struct NonlinearUnit {
    fp: FpUnit,
    aux: RefCell<HashMap<AuxOp, Rc<Netlist>>>,
}

impl Default for NonlinearUnit {
    fn default() -> Self {
        Self::new()
    }
}

impl NonlinearUnit {
    /// Correction stays on: division results are correctly rounded, which
    /// is what makes the compositions reproducible bit for bit on the host.
    pub fn new() -> Self {
        NonlinearUnit {
            fp: FpUnit::new(),
            aux: RefCell::new(HashMap::new()),
        }
    }

    /// Build on an arithmetic unit with the correction stage switched as
    /// requested.  Turning it off makes division, square root, and
    /// reciprocal square root merely faithful, which the composed
    /// functions inherit; use it to study that cheaper operating point.
    pub fn with_correction(correction: bool) -> Self {
        NonlinearUnit {
            fp: FpUnit::with_correction(correction),
            aux: RefCell::new(HashMap::new()),
        }
    }

    /// The underlying arithmetic unit (shared spike accounting).
    pub fn fp_unit(&self) -> &FpUnit {
        &self.fp
    }

    /// Spikes fired by the arithmetic and auxiliary netlists together.
    pub fn spike_count(&self) -> u64 {
        let aux: u64 = self.aux.borrow().values().map(|n| n.spike_count()).sum();
        self.fp.spike_count() + aux
    }

    pub fn clear_spike_count(&self) {
        self.fp.clear_spike_count();
        for n in self.aux.borrow().values() {
            n.clear_spike_count();
        }
    }

    fn aux_netlist(&self, op: AuxOp) -> Rc<Netlist> {
        let mut cache = self.aux.borrow_mut();
        let net = cache.entry(op).or_insert_with(|| Rc::new(build_aux(op)));
        Rc::clone(net)
    }

    fn expect_fp32(&self, t: &BitPlaneTensor) -> Result<(), NonlinearError> {
        if t.format() != PrecisionFormat::Fp32 {
            return Err(NonlinearError::UnsupportedFormat(t.format().name()));
        }
        Ok(())
    }

    /// Evaluate an auxiliary netlist on stacked operand tensors, returning
    /// `n_out` FP32 tensors.
    fn eval_aux(
        &self,
        op: AuxOp,
        ins: &[&BitPlaneTensor],
        n_out: usize,
    ) -> Result<Vec<BitPlaneTensor>, NonlinearError> {
        let net = self.aux_netlist(op);
        let mut m = ins[0].to_matrix();
        for t in &ins[1..] {
            m = m.vstack(&t.to_matrix()).map_err(FpError::from)?;
        }
        let out = net.eval(&m).map_err(FpError::from)?;
        if n_out == 1 {
            let t = BitPlaneTensor::from_matrix(PrecisionFormat::Fp32, &out)
                .map_err(FpError::from)?;
            return Ok(vec![t]);
        }
        let words = out.to_words();
        let mut tensors = Vec::with_capacity(n_out);
        for i in 0..n_out {
            let patterns: Vec<u64> = words
                .iter()
                .map(|w| (w >> (32 * i)) & 0xFFFF_FFFF)
                .collect();
            tensors.push(
                BitPlaneTensor::from_bit_patterns(PrecisionFormat::Fp32, &patterns)
                    .map_err(FpError::from)?,
            );
        }
        Ok(tensors)
    }

    /// `e^x`, elementwise, to within 4 ULP of the host libm (measured
    /// worst case over every FP32 magnitude in the clamp range: 1 ULP).
    /// `exp(0) = 1` exactly; overflow gives `+inf`, underflow gives `0`,
    /// and the denormal range rounds correctly.
    pub fn fp_exp(&self, x: &BitPlaneTensor) -> Result<BitPlaneTensor, NonlinearError> {
        self.expect_fp32(x)?;
        let n = x.len();
        let fp = &self.fp;
        let spec = PolynomialSpec::exponential();
        let rr = spec.range_reduction_constants;

        let xc = self.eval_aux(
            AuxOp::Clamp {
                lo: EXP_CLAMP_LO_BITS,
                hi: EXP_CLAMP_HI_BITS,
            },
            &[x],
            1,
        )?
        .pop()
        .unwrap();

        let magic = splat(round_magic_bits(), n);
        let scaled = fp.fp_mul(&xc, &splat(rr.inv_ln2, n))?;
        let y = fp.fp_add(&scaled, &magic)?;
        let kf = fp.fp_sub(&y, &magic)?;

        let hi_prod = fp.fp_mul(&kf, &splat(rr.ln2_hi, n))?;
        let r1 = fp.fp_sub(&xc, &hi_prod)?;
        let lo_prod = fp.fp_mul(&kf, &splat(rr.ln2_lo, n))?;
        let r = fp.fp_sub(&r1, &lo_prod)?;

        let mut acc = splat(*spec.coefficients.last().unwrap(), n);
        for &c in spec.coefficients.iter().rev().skip(1) {
            let prod = fp.fp_mul(&r, &acc)?;
            acc = fp.fp_add(&splat(c, n), &prod)?;
        }
        let tail = fp.fp_mul(&r, &acc)?;
        let er = fp.fp_add(&splat(ONE_BITS, n), &tail)?;

        Ok(self
            .eval_aux(AuxOp::ExpScale, &[x, &y, &er], 1)?
            .pop()
            .unwrap())
    }

    /// `1 / (1 + e^-x)`, composed as negate, exp, add one, reciprocal.
    /// `sigmoid(0) = 0.5` exactly; saturates to `1` and `0` at the ends.
    pub fn fp_sigmoid(&self, x: &BitPlaneTensor) -> Result<BitPlaneTensor, NonlinearError> {
        self.expect_fp32(x)?;
        let n = x.len();
        let neg = negate(x)?;
        let e = self.fp_exp(&neg)?;
        let denom = self.fp.fp_add(&splat(ONE_BITS, n), &e)?;
        Ok(self.fp.fp_reciprocal(&denom)?)
    }

    /// `tanh(x) = 2*sigmoid(2x) - 1`, reusing the sigmoid composition.
    /// The subtraction cancels near zero, so small arguments lose relative
    /// accuracy — that is a property of this decomposition, reproduced
    /// identically by [`reference_tanh`].
    pub fn fp_tanh(&self, x: &BitPlaneTensor) -> Result<BitPlaneTensor, NonlinearError> {
        self.expect_fp32(x)?;
        let n = x.len();
        let two = splat(TWO_BITS, n);
        let x2 = self.fp.fp_mul(&two, x)?;
        let s = self.fp_sigmoid(&x2)?;
        let s2 = self.fp.fp_mul(&two, &s)?;
        Ok(self.fp.fp_sub(&s2, &splat(ONE_BITS, n))?)
    }

    /// `silu(x) = x * sigmoid(x)`.
    pub fn fp_silu(&self, x: &BitPlaneTensor) -> Result<BitPlaneTensor, NonlinearError> {
        self.expect_fp32(x)?;
        let s = self.fp_sigmoid(x)?;
        Ok(self.fp.fp_mul(x, &s)?)
    }

    /// Sigmoid-form GELU: `x * sigmoid(1.702 * x)`.
    pub fn fp_gelu(&self, x: &BitPlaneTensor) -> Result<BitPlaneTensor, NonlinearError> {
        self.expect_fp32(x)?;
        let n = x.len();
        let scaled = self.fp.fp_mul(&splat(GELU_SCALE_BITS, n), x)?;
        let s = self.fp_sigmoid(&scaled)?;
        Ok(self.fp.fp_mul(x, &s)?)
    }

    /// `(sin x, cos x)`, elementwise, to within 4 ULP of the host libm on
    /// `|x| <= 2*pi*10^4` (measured worst case over the whole range: 2 ULP
    /// for sin, 3 for cos).  `sin(+-0) = +-0` and `cos(+-0) = 1` exactly;
    /// NaN and infinity yield NaN for both outputs.
    pub fn fp_sincos(
        &self,
        x: &BitPlaneTensor,
    ) -> Result<(BitPlaneTensor, BitPlaneTensor), NonlinearError> {
        self.expect_fp32(x)?;
        let n = x.len();
        let fp = &self.fp;

        let lo = SINCOS_RANGE_BITS | SIGN_MASK;
        let xc = self.eval_aux(
            AuxOp::Clamp {
                lo,
                hi: SINCOS_RANGE_BITS,
            },
            &[x],
            1,
        )?
        .pop()
        .unwrap();

        let magic = splat(round_magic_bits(), n);
        let scaled = fp.fp_mul(&xc, &splat(two_over_pi_bits(), n))?;
        let y = fp.fp_add(&scaled, &magic)?;
        let kf = fp.fp_sub(&y, &magic)?;
        let klo = self
            .eval_aux(AuxOp::LowByteToFloat, &[&y], 1)?
            .pop()
            .unwrap();
        // k = khi + klo with klo in -128..=127 and khi a multiple of 256, so
        // every product against a 12-bit pi/2 chunk is exact.
        let khi = fp.fp_sub(&kf, &klo)?;

        let [p1, p2, p3, p4] = pi_over_two_chunks();
        let mut terms = Vec::with_capacity(7);
        for chunk in [p1, p2, p3] {
            let c = splat(chunk, n);
            terms.push(fp.fp_mul(&khi, &c)?);
            terms.push(fp.fp_mul(&klo, &c)?);
        }
        terms.push(fp.fp_mul(&kf, &splat(p4, n))?);

        // Compensated cascade: keep the remainder as rh + rl so each
        // subtraction's rounding error is recaptured, not lost.
        let mut rh = xc;
        let mut rl = splat(0, n);
        for t in &terms {
            let b = negate(t)?;
            let s = fp.fp_add(&rh, &b)?;
            let a1 = fp.fp_sub(&s, &b)?;
            let b1 = fp.fp_sub(&s, &a1)?;
            let da = fp.fp_sub(&rh, &a1)?;
            let db = fp.fp_sub(&b, &b1)?;
            let e = fp.fp_add(&da, &db)?;
            rh = s;
            rl = fp.fp_add(&rl, &e)?;
        }
        let r = fp.fp_add(&rh, &rl)?;

        let u = fp.fp_mul(&r, &r)?;
        let horner = |coeffs: [u32; 4]| -> Result<BitPlaneTensor, NonlinearError> {
            let mut w = splat(coeffs[3], n);
            for &c in coeffs[..3].iter().rev() {
                let prod = fp.fp_mul(&u, &w)?;
                w = fp.fp_add(&splat(c, n), &prod)?;
            }
            Ok(w)
        };
        let ws = horner(sine_coefficients())?;
        let inner = fp.fp_mul(&u, &ws)?;
        let inner = fp.fp_add(&splat(ONE_BITS, n), &inner)?;
        let s_val = fp.fp_mul(&r, &inner)?;
        let wc = horner(cosine_coefficients())?;
        let ctail = fp.fp_mul(&u, &wc)?;
        let c_val = fp.fp_add(&splat(ONE_BITS, n), &ctail)?;

        let mut out = self.eval_aux(AuxOp::SincosFixup, &[x, &y, &s_val, &c_val], 2)?;
        let cos = out.pop().unwrap();
        let sin = out.pop().unwrap();
        Ok((sin, cos))
    }

    /// Softmax over one row: subtract the running maximum, exponentiate,
    /// and divide by the ascending-order sum.  A NaN anywhere poisons the
    /// sum and therefore the entire row.
    pub fn fp_softmax(&self, row: &BitPlaneTensor) -> Result<BitPlaneTensor, NonlinearError> {
        self.fp_softmax_rows(row, row.len())
    }

    /// Softmax over a batch of equal-width rows stored row-major in one
    /// tensor.  The per-row reduction order is identical to
    /// [`Self::fp_softmax`]; batching only packs independent rows into the
    /// evaluation lanes.
    pub fn fp_softmax_rows(
        &self,
        x: &BitPlaneTensor,
        width: usize,
    ) -> Result<BitPlaneTensor, NonlinearError> {
        self.expect_fp32(x)?;
        if width == 0 || x.is_empty() {
            return Err(NonlinearError::EmptyRow);
        }
        if x.len() % width != 0 {
            return Err(NonlinearError::RaggedRows {
                len: x.len(),
                width,
            });
        }
        let rows = x.len() / width;
        let patterns = x.bit_patterns();
        let column = |src: &[u64], j: usize| -> Result<BitPlaneTensor, NonlinearError> {
            let col: Vec<u64> = (0..rows).map(|i| src[i * width + j]).collect();
            Ok(BitPlaneTensor::from_bit_patterns(PrecisionFormat::Fp32, &col)
                .map_err(FpError::from)?)
        };

        let mut m = column(&patterns, 0)?;
        for j in 1..width {
            let c = column(&patterns, j)?;
            m = self.eval_aux(AuxOp::Maximum, &[&m, &c], 1)?.pop().unwrap();
        }
        let m_pat = m.bit_patterns();
        let broadcast: Vec<u64> = (0..x.len()).map(|i| m_pat[i / width]).collect();
        let mb = BitPlaneTensor::from_bit_patterns(PrecisionFormat::Fp32, &broadcast)
            .map_err(FpError::from)?;

        let d = self.fp.fp_sub(x, &mb)?;
        let e = self.fp_exp(&d)?;
        let e_pat = e.bit_patterns();
        let mut s = column(&e_pat, 0)?;
        for j in 1..width {
            let c = column(&e_pat, j)?;
            s = self.fp.fp_add(&s, &c)?;
        }
        let s_pat = s.bit_patterns();
        let sb: Vec<u64> = (0..x.len()).map(|i| s_pat[i / width]).collect();
        let sb = BitPlaneTensor::from_bit_patterns(PrecisionFormat::Fp32, &sb)
            .map_err(FpError::from)?;
        Ok(self.fp.fp_div(&e, &sb)?)
    }
}

// ---------------------------------------------------------------------------
// Host references: the same decompositions replayed in host f32 arithmetic.
// With division correction on (the default), the circuits match these bit
// for bit.
// ---------------------------------------------------------------------------

fn f(bits: u32) -> f32 {
    f32::from_bits(bits)
}

fn exp_pipeline(x: f32) -> (f32, f32) {
    let spec = PolynomialSpec::exponential();
    let rr = spec.range_reduction_constants;
    let magic = f(round_magic_bits());
    let hi = f(EXP_CLAMP_HI_BITS);
    let lo = f(EXP_CLAMP_LO_BITS);
    let xc = if x > hi { hi } else { x };
    let xc = if xc < lo { lo } else { xc };
    let y = xc * f(rr.inv_ln2) + magic;
    let kf = y - magic;
    let r = (xc - kf * f(rr.ln2_hi)) - kf * f(rr.ln2_lo);
    let mut acc = f(*spec.coefficients.last().unwrap());
    for &c in spec.coefficients.iter().rev().skip(1) {
        acc = f(c) + r * acc;
    }
    let er = 1.0f32 + r * acc;
    (y, er)
}

/// Host replay of [`NonlinearUnit::fp_exp`].
pub fn reference_exp(bits: u32) -> u32 {
    let x = f(bits);
    if x.is_nan() {
        return PrecisionFormat::Fp32.qnan() as u32;
    }
    if x == f32::INFINITY {
        return f32::INFINITY.to_bits();
    }
    if x == f32::NEG_INFINITY {
        return 0;
    }
    let (y, er) = exp_pipeline(x);
    // Signed 10-bit k from the low mantissa bits of y; the final scale is
    // one exact product and a single rounding, which is precisely what the
    // packing netlist computes.
    let k = ((y.to_bits() & 0x3FF) as i32) << 22 >> 22;
    round_to_format(PrecisionFormat::Fp32, er as f64 * (k as f64).exp2()) as u32
}

/// Host arithmetic leaves NaN sign and payload to the platform (x86 even
/// flips the sign on invalid operations); the netlists always emit the
/// canonical quiet NaN, so the mirrors must canonicalize too.
fn canon(v: f32) -> u32 {
    if v.is_nan() {
        PrecisionFormat::Fp32.qnan() as u32
    } else {
        v.to_bits()
    }
}

/// Host replay of [`NonlinearUnit::fp_sigmoid`].
pub fn reference_sigmoid(bits: u32) -> u32 {
    let e = f(reference_exp(bits ^ SIGN_MASK));
    let denom = 1.0f32 + e;
    canon(1.0f32 / denom)
}

/// Host replay of [`NonlinearUnit::fp_tanh`].
pub fn reference_tanh(bits: u32) -> u32 {
    let x2 = 2.0f32 * f(bits);
    let s = f(reference_sigmoid(x2.to_bits()));
    canon(2.0f32 * s - 1.0f32)
}

/// Host replay of [`NonlinearUnit::fp_silu`].
pub fn reference_silu(bits: u32) -> u32 {
    let s = f(reference_sigmoid(bits));
    canon(f(bits) * s)
}

/// Host replay of [`NonlinearUnit::fp_gelu`].
pub fn reference_gelu(bits: u32) -> u32 {
    let scaled = f(GELU_SCALE_BITS) * f(bits);
    let s = f(reference_sigmoid(scaled.to_bits()));
    canon(f(bits) * s)
}

fn two_sum(a: f32, b: f32) -> (f32, f32) {
    let s = a + b;
    let a1 = s - b;
    let b1 = s - a1;
    let da = a - a1;
    let db = b - b1;
    (s, da + db)
}

/// Host replay of [`NonlinearUnit::fp_sincos`].
pub fn reference_sincos(bits: u32) -> (u32, u32) {
    let x = f(bits);
    let qnan = PrecisionFormat::Fp32.qnan() as u32;
    if x.is_nan() || x.is_infinite() {
        return (qnan, qnan);
    }
    if x == 0.0 {
        return (bits, ONE_BITS);
    }
    let cap = f(SINCOS_RANGE_BITS);
    let xc = if x > cap { cap } else { x };
    let xc = if xc < -cap { -cap } else { xc };
    let magic = f(round_magic_bits());
    let y = xc * f(two_over_pi_bits()) + magic;
    let kf = y - magic;
    let klo = ((((y.to_bits() & 0xFF) as i32) << 24) >> 24) as f32;
    let khi = kf - klo;
    let [p1, p2, p3, p4] = pi_over_two_chunks();
    let terms = [
        khi * f(p1),
        klo * f(p1),
        khi * f(p2),
        klo * f(p2),
        khi * f(p3),
        klo * f(p3),
        kf * f(p4),
    ];
    let mut rh = xc;
    let mut rl = 0.0f32;
    for t in terms {
        let b = f32::from_bits(t.to_bits() ^ SIGN_MASK);
        let (s, e) = two_sum(rh, b);
        rh = s;
        rl += e;
    }
    let r = rh + rl;
    let u = r * r;
    let horner = |coeffs: [u32; 4]| -> f32 {
        let mut w = f(coeffs[3]);
        for &c in coeffs[..3].iter().rev() {
            w = f(c) + u * w;
        }
        w
    };
    let sp = r * (1.0f32 + u * horner(sine_coefficients()));
    let cp = 1.0f32 + u * horner(cosine_coefficients());
    let q = y.to_bits() & 3;
    let (s_base, c_base) = if q & 1 != 0 { (cp, sp) } else { (sp, cp) };
    let s_out = if q & 2 != 0 {
        f32::from_bits(s_base.to_bits() ^ SIGN_MASK)
    } else {
        s_base
    };
    let c_out = if (q >> 1) ^ q & 1 != 0 {
        f32::from_bits(c_base.to_bits() ^ SIGN_MASK)
    } else {
        c_base
    };
    (s_out.to_bits(), c_out.to_bits())
}

/// Host replay of [`NonlinearUnit::fp_softmax`] (one row, at least one
/// element).
pub fn reference_softmax(row: &[u32]) -> Vec<u32> {
    assert!(!row.is_empty(), "softmax row must hold at least one element");
    let mut m = row[0];
    for &v in &row[1..] {
        if f(v) > f(m) {
            m = v;
        }
    }
    let exps: Vec<u32> = row
        .iter()
        .map(|&v| reference_exp((f(v) - f(m)).to_bits()))
        .collect();
    let mut sum = f(exps[0]);
    for &e in &exps[1..] {
        sum += f(e);
    }
    exps.iter().map(|&e| canon(f(e) / sum)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gate::BitMatrix;

    #[test]
    fn coefficient_table_matches_checksum() {
        let digest = Sha256::digest(COEFF_TABLE.as_bytes());
        let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
        assert_eq!(hex, COEFF_TABLE_SHA256);
        assert_eq!(coeff_table().len(), 23);
    }

    #[test]
    fn polynomial_spec_has_expected_shape() {
        let spec = PolynomialSpec::exponential();
        assert_eq!(spec.degree, 6);
        assert_eq!(spec.coefficients.len(), 6);
        assert_eq!(spec.coefficients[0], 0x3F80_0000);
        assert_eq!(spec.range_reduction_constants.inv_ln2, 0x3FB8_AA3B);
        assert_eq!(spec.range_reduction_constants.ln2_hi, 0x3F31_7200);
    }

    #[test]
    fn pinned_constants_decode_to_expected_values() {
        assert_eq!(f32::from_bits(GELU_SCALE_BITS), 1.702);
        assert_eq!(f32::from_bits(EXP_CLAMP_LO_BITS), -110.0);
        assert_eq!(f32::from_bits(EXP_CLAMP_HI_BITS), 90.0);
        assert_eq!(f32::from_bits(round_magic_bits()), 1.5 * (1 << 23) as f32);
        let cap = f32::from_bits(SINCOS_RANGE_BITS) as f64;
        assert!((cap - 2.0 * std::f64::consts::PI * 1e4).abs() < 1e-2);
        // ln2_hi carries few enough significand bits that k * ln2_hi is
        // exact for every |k| <= 159.
        assert_eq!(coeff("EXP_LN2_HI") & 0x1FF, 0);
    }

    #[test]
    fn low_byte_netlist_encodes_every_byte() {
        let net = low_byte_to_float_netlist();
        let magic = 0x4B40_0000u64;
        let words: Vec<u64> = (0..256).map(|k| magic + k).collect();
        let out = net.eval(&BitMatrix::from_words(32, &words)).unwrap();
        for (k, w) in out.to_words().iter().enumerate() {
            let signed = ((k as i32) << 24) >> 24;
            assert_eq!(
                *w as u32,
                (signed as f32).to_bits(),
                "byte {k} encodes wrong"
            );
        }
    }

    #[test]
    fn exp_scale_netlist_matches_ldexp() {
        let net = exp_scale_netlist();
        let cases: &[(u32, i32)] = &[
            (0x3F80_0000, 0),    // 1.0 * 2^0
            (0x3F80_0000, 10),   // exact power climb
            (0x3FB5_04F3, -3),   // sqrt(2) scaled down
            (0x3F35_04F3, 127),  // overflow edge
            (0x3EAA_AAAB, -140), // deep denormal
            (0x3F80_0001, -150), // just above the underflow midpoint
            (0x3F7F_FFFF, 128),  // just under the overflow boundary
        ];
        for &(er, k) in cases {
            let y = 0x4B40_0000u32 + (k as u32 & 0x3FF);
            let x = 0x3F80_0000u64; // finite placeholder argument
            let m = BitMatrix::from_words(32, &[x])
                .vstack(&BitMatrix::from_words(32, &[y as u64]))
                .unwrap()
                .vstack(&BitMatrix::from_words(32, &[er as u64]))
                .unwrap();
            let got = net.eval(&m).unwrap().to_words()[0] as u32;
            let want = round_to_format(
                PrecisionFormat::Fp32,
                f32::from_bits(er) as f64 * (k as f64).exp2(),
            ) as u32;
            assert_eq!(got, want, "er={er:#010X} k={k}");
        }
    }

    #[test]
    fn reference_exp_hits_pinned_values() {
        assert_eq!(reference_exp(0x0000_0000), 0x3F80_0000); // exp(0) = 1
        assert_eq!(reference_exp(0x8000_0000), 0x3F80_0000); // exp(-0) = 1
        assert_eq!(reference_exp(0x3F80_0000), 0x402D_F854); // exp(1)
        assert_eq!(reference_exp(0x7F80_0000), 0x7F80_0000); // exp(inf)
        assert_eq!(reference_exp(0xFF80_0000), 0x0000_0000); // exp(-inf)
        assert_eq!(
            reference_exp(0x7FC0_0000),
            PrecisionFormat::Fp32.qnan() as u32
        );
        // Saturation beyond the clamp window.
        assert_eq!(reference_exp(0x42DC_0000), 0x7F80_0000); // exp(110)
        assert_eq!(reference_exp(0xC2DC_0000), 0x0000_0000); // exp(-110)
    }

    #[test]
    fn reference_exp_stays_within_budget_of_host_libm() {
        let mut worst = 0i64;
        for i in 0..20_000u32 {
            let x = -104.0 + i as f64 * (196.0 / 20_000.0);
            let xb = (x as f32).to_bits();
            let got = reference_exp(xb);
            let want = round_to_format(PrecisionFormat::Fp32, (x as f32 as f64).exp()) as u32;
            let d = (ulp_index(got) - ulp_index(want)).abs();
            worst = worst.max(d);
        }
        assert!(worst <= 4, "worst exp error {worst} ulp");
    }

    fn ulp_index(bits: u32) -> i64 {
        let mag = (bits & 0x7FFF_FFFF) as i64;
        if bits & SIGN_MASK != 0 {
            -mag
        } else {
            mag
        }
    }

    #[test]
    fn reference_sincos_basics() {
        assert_eq!(reference_sincos(0x0000_0000), (0x0000_0000, ONE_BITS));
        assert_eq!(reference_sincos(0x8000_0000), (0x8000_0000, ONE_BITS));
        let qnan = PrecisionFormat::Fp32.qnan() as u32;
        assert_eq!(reference_sincos(0x7F80_0000), (qnan, qnan));
        assert_eq!(reference_sincos(0x7FC0_0001), (qnan, qnan));
        // sin(pi/2-ish) = 1 to the last bit, cos crosses zero.
        let (s, c) = reference_sincos(0x3FC9_0FDB);
        assert_eq!(s, 0x3F80_0000);
        assert!(f32::from_bits(c).abs() < 1e-7);
    }

    #[test]
    fn reference_sincos_stays_within_budget_of_host_libm() {
        let mut worst = 0i64;
        let cap = f32::from_bits(SINCOS_RANGE_BITS) as f64;
        for i in 0..20_000u32 {
            let x = (i as f64 / 20_000.0 * 2.0 - 1.0) * cap;
            let xb = (x as f32).to_bits();
            let x64 = x as f32 as f64;
            let (s, c) = reference_sincos(xb);
            let ws = round_to_format(PrecisionFormat::Fp32, x64.sin()) as u32;
            let wc = round_to_format(PrecisionFormat::Fp32, x64.cos()) as u32;
            worst = worst.max((ulp_index(s) - ulp_index(ws)).abs());
            worst = worst.max((ulp_index(c) - ulp_index(wc)).abs());
        }
        // The near-multiples of pi/2 in every binade are the hard cases.
        for k in [1i64, 2, 3, 6, 12, 24, 48, 161, 322, 644, 1288, 2850, 5700, 11400, 33433] {
            let x = (k as f64 * std::f64::consts::FRAC_PI_2) as f32;
            let (s, c) = reference_sincos(x.to_bits());
            let ws = round_to_format(PrecisionFormat::Fp32, (x as f64).sin()) as u32;
            let wc = round_to_format(PrecisionFormat::Fp32, (x as f64).cos()) as u32;
            worst = worst.max((ulp_index(s) - ulp_index(ws)).abs());
            worst = worst.max((ulp_index(c) - ulp_index(wc)).abs());
        }
        assert!(worst <= 4, "worst sin/cos error {worst} ulp");
    }

    #[test]
    fn reference_softmax_single_element_is_one() {
        assert_eq!(reference_softmax(&[0xC2C8_0000]), vec![ONE_BITS]);
        assert_eq!(reference_softmax(&[0x4310_0000]), vec![ONE_BITS]);
    }

    #[test]
    fn reference_softmax_ignores_nan_in_max_but_poisons_row() {
        let row = [0x3F80_0000, 0x7FC0_0000, 0x4000_0000];
        let out = reference_softmax(&row);
        for v in out {
            assert!(f32::from_bits(v).is_nan());
        }
    }
}
