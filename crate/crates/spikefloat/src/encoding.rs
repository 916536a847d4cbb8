//! Spike encodings of numeric tensors.
//!
//! The workhorse is the *spatial* encoding: every bit of a value's IEEE-754
//! pattern gets its own parallel spike channel ([`BitPlaneTensor`]), so a
//! tensor of FP32 values becomes 32 bit-planes and decoding is exact — zero
//! information loss, by construction.  Rate and time-to-first-spike codings
//! are provided as the lossy baselines the spatial scheme is measured
//! against, and [`truncate_planes`] gives the reduced-channel variant.
//!
//! This module also owns the host-side value semantics of each format:
//! [`decode_bits`] (bit pattern → exact `f64`) and [`round_to_format`]
//! (`f64` → nearest-even bit pattern).  The arithmetic oracle in
//! [`crate::fp`] is built on these two functions.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gate::BitMatrix;

/// IEEE-754 binary interchange formats supported by the circuits (FP64 is
/// encode/decode only — no FP64 arithmetic datapath exists).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PrecisionFormat {
    #[serde(rename = "fp8_e4m3")]
    Fp8E4M3,
    #[serde(rename = "fp16")]
    Fp16,
    #[serde(rename = "fp32")]
    Fp32,
    #[serde(rename = "fp64")]
    Fp64,
}

impl PrecisionFormat {
    pub const fn bit_width(self) -> usize {
        match self {
            PrecisionFormat::Fp8E4M3 => 8,
            PrecisionFormat::Fp16 => 16,
            PrecisionFormat::Fp32 => 32,
            PrecisionFormat::Fp64 => 64,
        }
    }

    pub const fn exp_bits(self) -> usize {
        match self {
            PrecisionFormat::Fp8E4M3 => 4,
            PrecisionFormat::Fp16 => 5,
            PrecisionFormat::Fp32 => 8,
            PrecisionFormat::Fp64 => 11,
        }
    }

    pub const fn man_bits(self) -> usize {
        self.bit_width() - 1 - self.exp_bits()
    }

    pub const fn bias(self) -> i64 {
        (1 << (self.exp_bits() - 1)) - 1
    }

    pub fn name(self) -> &'static str {
        match self {
            PrecisionFormat::Fp8E4M3 => "fp8_e4m3",
            PrecisionFormat::Fp16 => "fp16",
            PrecisionFormat::Fp32 => "fp32",
            PrecisionFormat::Fp64 => "fp64",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "fp8" | "fp8_e4m3" | "e4m3" => Some(PrecisionFormat::Fp8E4M3),
            "fp16" => Some(PrecisionFormat::Fp16),
            "fp32" => Some(PrecisionFormat::Fp32),
            "fp64" => Some(PrecisionFormat::Fp64),
            _ => None,
        }
    }

    pub fn sign_bit(self, bits: u64) -> bool {
        bits >> (self.bit_width() - 1) & 1 == 1
    }

    pub fn exp_field(self, bits: u64) -> u64 {
        bits >> self.man_bits() & ((1 << self.exp_bits()) - 1)
    }

    pub fn man_field(self, bits: u64) -> u64 {
        bits & ((1 << self.man_bits()) - 1)
    }

    fn exp_mask(self) -> u64 {
        (1 << self.exp_bits()) - 1
    }

    pub fn is_nan(self, bits: u64) -> bool {
        self.exp_field(bits) == self.exp_mask() && self.man_field(bits) != 0
    }

    pub fn is_inf(self, bits: u64) -> bool {
        self.exp_field(bits) == self.exp_mask() && self.man_field(bits) == 0
    }

    /// Canonical quiet NaN: sign 0, exponent all-ones, mantissa MSB set.
    pub fn qnan(self) -> u64 {
        self.exp_mask() << self.man_bits() | 1 << (self.man_bits() - 1)
    }

    pub fn infinity(self, negative: bool) -> u64 {
        (negative as u64) << (self.bit_width() - 1) | self.exp_mask() << self.man_bits()
    }

    pub fn max_finite(self) -> u64 {
        (self.exp_mask() - 1) << self.man_bits() | (1 << self.man_bits()) - 1
    }

    fn pattern_mask(self) -> u64 {
        if self.bit_width() == 64 {
            u64::MAX
        } else {
            (1 << self.bit_width()) - 1
        }
    }
}

/// Exact numeric value of a bit pattern.  NaN patterns map to `f64::NAN`
/// (payloads only survive at the bit level, which is where all fidelity
/// comparisons happen).
pub fn decode_bits(format: PrecisionFormat, bits: u64) -> f64 {
    if format == PrecisionFormat::Fp64 {
        return f64::from_bits(bits);
    }
    let p = format.man_bits() as i64;
    let sign = if format.sign_bit(bits) { -1.0 } else { 1.0 };
    let e = format.exp_field(bits) as i64;
    let m = format.man_field(bits);
    if e == format.exp_mask() as i64 {
        return if m == 0 {
            sign * f64::INFINITY
        } else {
            f64::NAN
        };
    }
    let (sig, exp) = if e == 0 {
        (m, 1 - format.bias() - p)
    } else {
        (m | 1 << p, e - format.bias() - p)
    };
    sign * sig as f64 * (exp as f64).exp2()
}

/// Round an `f64` to the nearest representable pattern of `format`
/// (ties-to-even), with IEEE overflow to infinity and gradual underflow
/// through the denormals.  NaN canonicalizes to [`PrecisionFormat::qnan`].
pub fn round_to_format(format: PrecisionFormat, value: f64) -> u64 {
    if format == PrecisionFormat::Fp64 {
        return value.to_bits();
    }
    if value.is_nan() {
        return format.qnan();
    }
    let neg = value.is_sign_negative();
    let sign = (neg as u64) << (format.bit_width() - 1);
    let a = value.abs();
    if a == 0.0 {
        return sign;
    }
    if a.is_infinite() {
        return format.infinity(neg);
    }
    let p = format.man_bits() as i64;
    let bits = a.to_bits();
    let e2 = (bits >> 52 & 0x7FF) as i64 - 1023;
    debug_assert!(e2 > -1023, "f64 denormals never arise from these formats");
    let frac53 = bits & ((1u64 << 52) - 1) | 1 << 52;
    // Bits of frac53 to discard so that what remains is the target
    // significand; below the normal range the significand loses one more
    // bit per exponent step (gradual underflow).
    let min_e = 1 - format.bias();
    let shift = 52 - p + (min_e - e2).max(0);
    if shift >= 54 {
        return sign; // Far below the smallest denormal: rounds to zero.
    }
    let shift = shift as u32;
    let keep = frac53 >> shift;
    let rem = frac53 & ((1u64 << shift) - 1);
    let half = 1u64 << (shift - 1);
    let round_up = rem > half || (rem == half && keep & 1 == 1);
    // Exponent-and-mantissa as one integer: magnitude patterns are ordered,
    // so the round-up increment carries through every boundary (mantissa
    // overflow, denormal-to-normal, max-finite-to-infinity) by itself.
    let base = if e2 >= min_e {
        (((e2 - min_e + 1) as u64) << p) + (keep - (1u64 << p))
    } else {
        keep
    };
    let mag = base + round_up as u64;
    let inf_mag = format.exp_mask() << p;
    if mag >= inf_mag {
        return format.infinity(neg);
    }
    sign | mag
}

#[derive(Debug, Error, PartialEq)]
pub enum EncodingError {
    #[error("value {value} at index {index} is not representable in {format}")]
    NotRepresentable {
        index: usize,
        value: f64,
        format: &'static str,
    },
    #[error("expected format {expected:?}, got {got:?}")]
    FormatMismatch {
        expected: PrecisionFormat,
        got: PrecisionFormat,
    },
    #[error("bit pattern {pattern:#x} at index {index} does not fit {format}")]
    PatternTooWide {
        index: usize,
        pattern: u64,
        format: &'static str,
    },
    #[error("bit matrix has {got} rows, format needs {expected}")]
    MatrixShape { expected: usize, got: usize },
    #[error("time-to-first-spike train must contain exactly one spike, found {0}")]
    MalformedTrain(usize),
}

/// A tensor as parallel spike channels: one boolean plane per bit of the
/// format, MSB first, so plane 0 is the sign plane.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BitPlaneTensor {
    format: PrecisionFormat,
    n_elements: usize,
    /// Plane-major storage, `bit_width * n_elements` entries.
    planes: Vec<u8>,
}

impl BitPlaneTensor {
    /// Encode values that are already exactly representable in `format`.
    /// This performs no rounding: a value that fails to round-trip is a
    /// usage error.
    pub fn encode(values: &[f64], format: PrecisionFormat) -> Result<Self, EncodingError> {
        let mut patterns = Vec::with_capacity(values.len());
        for (index, &v) in values.iter().enumerate() {
            let bits = round_to_format(format, v);
            let back = decode_bits(format, bits);
            if !(back == v || (back.is_nan() && v.is_nan())) {
                return Err(EncodingError::NotRepresentable {
                    index,
                    value: v,
                    format: format.name(),
                });
            }
            patterns.push(bits);
        }
        Ok(Self::from_bit_patterns_unchecked(format, &patterns))
    }

    /// Wrap raw bit patterns (each must fit the format width).
    pub fn from_bit_patterns(
        format: PrecisionFormat,
        patterns: &[u64],
    ) -> Result<Self, EncodingError> {
        for (index, &pattern) in patterns.iter().enumerate() {
            if pattern & !format.pattern_mask() != 0 {
                return Err(EncodingError::PatternTooWide {
                    index,
                    pattern,
                    format: format.name(),
                });
            }
        }
        Ok(Self::from_bit_patterns_unchecked(format, patterns))
    }

    fn from_bit_patterns_unchecked(format: PrecisionFormat, patterns: &[u64]) -> Self {
        let w = format.bit_width();
        let n = patterns.len();
        let mut planes = vec![0u8; w * n];
        for (lane, &bits) in patterns.iter().enumerate() {
            for p in 0..w {
                // Plane 0 holds the MSB (the sign bit).
                planes[p * n + lane] = (bits >> (w - 1 - p) & 1) as u8;
            }
        }
        BitPlaneTensor {
            format,
            n_elements: n,
            planes,
        }
    }

    pub fn format(&self) -> PrecisionFormat {
        self.format
    }

    pub fn len(&self) -> usize {
        self.n_elements
    }

    pub fn is_empty(&self) -> bool {
        self.n_elements == 0
    }

    pub fn plane(&self, p: usize) -> &[u8] {
        &self.planes[p * self.n_elements..(p + 1) * self.n_elements]
    }

    /// Exact bit patterns, one per element.
    pub fn bit_patterns(&self) -> Vec<u64> {
        let w = self.format.bit_width();
        (0..self.n_elements)
            .map(|lane| {
                (0..w).fold(0u64, |acc, p| {
                    acc | (self.planes[p * self.n_elements + lane] as u64) << (w - 1 - p)
                })
            })
            .collect()
    }

    /// Exact numeric values (NaN payloads collapse to `f64::NAN`).
    pub fn decode(&self) -> Vec<f64> {
        self.bit_patterns()
            .iter()
            .map(|&b| decode_bits(self.format, b))
            .collect()
    }

    /// View as a circuit input matrix: one row per bit, LSB first (the wire
    /// convention of [`crate::word::BitWord`]), one lane per element.
    pub fn to_matrix(&self) -> BitMatrix {
        BitMatrix::from_words(self.format.bit_width(), &self.bit_patterns())
    }

    /// Rebuild from circuit outputs (rows LSB-first).
    pub fn from_matrix(format: PrecisionFormat, m: &BitMatrix) -> Result<Self, EncodingError> {
        if m.rows() != format.bit_width() {
            return Err(EncodingError::MatrixShape {
                expected: format.bit_width(),
                got: m.rows(),
            });
        }
        Ok(Self::from_bit_patterns_unchecked(format, &m.to_words()))
    }

    /// The same bit pattern repeated `n` times (constant operands).
    pub fn splat(format: PrecisionFormat, pattern: u64, n: usize) -> Self {
        Self::from_bit_patterns_unchecked(format, &vec![pattern; n])
    }
}

/// Keep only the `k` most significant planes (sign, then exponent
/// downwards), zeroing the rest: the reduced-channel spatial encoding.
/// Dropping low mantissa planes first means the pointwise error can only
/// shrink as `k` grows.
pub fn truncate_planes(t: &BitPlaneTensor, k: usize) -> BitPlaneTensor {
    let w = t.format.bit_width();
    let n = t.n_elements;
    let mut out = t.clone();
    for p in k.min(w)..w {
        out.planes[p * n..(p + 1) * n].fill(0);
    }
    out
}

/// Dynamic range shared by the rate and time-to-first-spike baselines:
/// values are treated as living in `[-RANGE, RANGE]`.
pub const ENCODING_RANGE: f64 = 18_000.0;

/// A unary spike train with its polarity carried on a separate sign
/// channel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpikeTrain {
    pub sign: bool,
    pub spikes: Vec<u8>,
}

/// Rate coding: `steps` Bernoulli draws with rate `|v| / RANGE`.
pub fn rate_encode(value: f64, steps: usize, rng_seed: u64) -> SpikeTrain {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let p = (value.abs() / ENCODING_RANGE).clamp(0.0, 1.0);
    SpikeTrain {
        sign: value.is_sign_negative(),
        spikes: (0..steps).map(|_| (rng.gen::<f64>() < p) as u8).collect(),
    }
}

/// Mean firing rate scaled back to the value range.
pub fn rate_decode(train: &SpikeTrain) -> f64 {
    let steps = train.spikes.len().max(1);
    let count: u32 = train.spikes.iter().map(|&s| s as u32).sum();
    let magnitude = count as f64 / steps as f64 * ENCODING_RANGE;
    if train.sign {
        -magnitude
    } else {
        magnitude
    }
}

/// Time-to-first-spike coding: the value's position in `[-RANGE, RANGE]`
/// picks the single timestep that fires.
pub fn ttfs_encode(value: f64, steps: usize) -> Vec<u8> {
    let u = ((value + ENCODING_RANGE) / (2.0 * ENCODING_RANGE)).clamp(0.0, 1.0);
    let bin = ((u * steps as f64) as usize).min(steps - 1);
    let mut spikes = vec![0u8; steps];
    spikes[bin] = 1;
    spikes
}

/// Decode to the midpoint of the spiking bin.
pub fn ttfs_decode(train: &[u8]) -> Result<f64, EncodingError> {
    let count = train.iter().filter(|&&s| s == 1).count();
    if count != 1 {
        return Err(EncodingError::MalformedTrain(count));
    }
    let bin = train.iter().position(|&s| s == 1).unwrap();
    let steps = train.len();
    Ok((bin as f64 + 0.5) / steps as f64 * 2.0 * ENCODING_RANGE - ENCODING_RANGE)
}

/// The benchmark input distribution: seeded normal draws with sigma 100,
/// clipped to the coding range and snapped to FP32 so the spatial encoding
/// is measured on exactly representable inputs.
pub fn benchmark_values(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0f64, 100.0).expect("valid sigma");
    (0..n)
        .map(|_| {
            let v: f64 = normal.sample(&mut rng);
            v.clamp(-ENCODING_RANGE, ENCODING_RANGE) as f32 as f64
        })
        .collect()
}
