//! IEEE-754 arithmetic compiled to integrate-and-fire netlists.
//!
//! [`FpUnit`] is the front door: it builds one netlist per (operation,
//! format) pair on first use, caches it, and evaluates whole tensors of
//! packed operands through it lane-parallel.  Addition and multiplication
//! are exact-then-round datapaths; division and square root run a
//! Newton-Raphson/Heron refinement on an internal 32-bit datapath and can
//! finish with an exact result-selection step (`correction`) that makes
//! them correctly rounded rather than faithfully rounded.

mod divsqrt;
pub(crate) mod pack;
pub(crate) mod pipeline;

pub mod oracle;

use std::cell::RefCell;
use std::collections::HashMap;
use std::rc::Rc;

use thiserror::Error;

use crate::encoding::{BitPlaneTensor, EncodingError, PrecisionFormat};
use crate::gate::{Builder, GateError, Netlist, WireId};
use crate::word::BitWord;

pub use divsqrt::{refine_reciprocal_reference, refinement_netlist};
pub use pack::{FpOperand, RoundingContext, RoundingMode};

/// One cached circuit per operation and format.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FpOp {
    Add,
    Mul,
    Div,
    Sqrt,
    Reciprocal,
    Rsqrt,
}

impl FpOp {
    pub fn name(self) -> &'static str {
        match self {
            FpOp::Add => "add",
            FpOp::Mul => "mul",
            FpOp::Div => "div",
            FpOp::Sqrt => "sqrt",
            FpOp::Reciprocal => "reciprocal",
            FpOp::Rsqrt => "rsqrt",
        }
    }

    pub fn is_unary(self) -> bool {
        matches!(self, FpOp::Sqrt | FpOp::Reciprocal | FpOp::Rsqrt)
    }
}

#[derive(Debug, Error)]
pub enum FpError {
    #[error("operand formats differ: {0} vs {1}")]
    FormatMismatch(&'static str, &'static str),
    #[error("operand lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("{0} arithmetic is not implemented (the format is encode/decode only)")]
    Unsupported(&'static str),
    #[error(transparent)]
    Gate(#[from] GateError),
    #[error(transparent)]
    Encoding(#[from] EncodingError),
}

/// Floating-point execution unit backed by gate netlists.
pub struct FpUnit {
    correction: bool,
    cache: RefCell<HashMap<(FpOp, PrecisionFormat), Rc<Netlist>>>,
}

impl Default for FpUnit {
    fn default() -> Self {
        Self::new()
    }
}

impl FpUnit {
    /// Unit with the divide/square-root correction step enabled (their
    /// results are correctly rounded).
    pub fn new() -> Self {
        FpUnit {
            correction: true,
            cache: RefCell::new(HashMap::new()),
        }
    }

    /// Unit with an explicit correction setting.  Without correction,
    /// divide and square root stay within one ULP but may miss the
    /// correctly-rounded answer.
    pub fn with_correction(correction: bool) -> Self {
        FpUnit {
            correction,
            cache: RefCell::new(HashMap::new()),
        }
    }

    pub fn correction(&self) -> bool {
        self.correction
    }

    /// The netlist for one operation, built on first request.
    pub fn netlist(&self, op: FpOp, format: PrecisionFormat) -> Result<Rc<Netlist>, FpError> {
        if format == PrecisionFormat::Fp64 {
            return Err(FpError::Unsupported(format.name()));
        }
        let mut cache = self.cache.borrow_mut();
        let net = cache
            .entry((op, format))
            .or_insert_with(|| Rc::new(build_netlist(op, format, self.correction)));
        Ok(Rc::clone(net))
    }

    /// Total spikes fired by every cached netlist since the last clear.
    pub fn spike_count(&self) -> u64 {
        self.cache
            .borrow()
            .values()
            .map(|n| n.spike_count())
            .sum()
    }

    pub fn clear_spike_count(&self) {
        for n in self.cache.borrow().values() {
            n.clear_spike_count();
        }
    }

    pub fn fp_add(&self, a: &BitPlaneTensor, b: &BitPlaneTensor) -> Result<BitPlaneTensor, FpError> {
        self.binary(FpOp::Add, a, b)
    }

    /// Subtraction is addition with the second operand's sign flipped.
    pub fn fp_sub(&self, a: &BitPlaneTensor, b: &BitPlaneTensor) -> Result<BitPlaneTensor, FpError> {
        let flipped = flip_signs(b)?;
        self.binary(FpOp::Add, a, &flipped)
    }

    pub fn fp_mul(&self, a: &BitPlaneTensor, b: &BitPlaneTensor) -> Result<BitPlaneTensor, FpError> {
        self.binary(FpOp::Mul, a, b)
    }

    pub fn fp_div(&self, a: &BitPlaneTensor, b: &BitPlaneTensor) -> Result<BitPlaneTensor, FpError> {
        self.binary(FpOp::Div, a, b)
    }

    pub fn fp_sqrt(&self, a: &BitPlaneTensor) -> Result<BitPlaneTensor, FpError> {
        self.unary(FpOp::Sqrt, a)
    }

    pub fn fp_reciprocal(&self, a: &BitPlaneTensor) -> Result<BitPlaneTensor, FpError> {
        self.unary(FpOp::Reciprocal, a)
    }

    /// Reciprocal square root as one operation.  Without correction this
    /// is the square root followed by the reciprocal (two roundings);
    /// with correction the result is correctly rounded.
    pub fn fp_rsqrt(&self, a: &BitPlaneTensor) -> Result<BitPlaneTensor, FpError> {
        self.unary(FpOp::Rsqrt, a)
    }

    fn binary(
        &self,
        op: FpOp,
        a: &BitPlaneTensor,
        b: &BitPlaneTensor,
    ) -> Result<BitPlaneTensor, FpError> {
        if a.format() != b.format() {
            return Err(FpError::FormatMismatch(a.format().name(), b.format().name()));
        }
        if a.len() != b.len() {
            return Err(FpError::LengthMismatch(a.len(), b.len()));
        }
        let net = self.netlist(op, a.format())?;
        let inputs = a.to_matrix().vstack(&b.to_matrix())?;
        let out = net.eval(&inputs)?;
        Ok(BitPlaneTensor::from_matrix(a.format(), &out)?)
    }

    fn unary(&self, op: FpOp, a: &BitPlaneTensor) -> Result<BitPlaneTensor, FpError> {
        let net = self.netlist(op, a.format())?;
        let out = net.eval(&a.to_matrix())?;
        Ok(BitPlaneTensor::from_matrix(a.format(), &out)?)
    }
}

/// Flip the sign plane of a tensor (negation at the encoding level).
fn flip_signs(t: &BitPlaneTensor) -> Result<BitPlaneTensor, FpError> {
    let w = t.format().bit_width();
    let mask = 1u64 << (w - 1);
    let patterns: Vec<u64> = t.bit_patterns().iter().map(|&p| p ^ mask).collect();
    Ok(BitPlaneTensor::from_bit_patterns(t.format(), &patterns)?)
}

/// Read netlist input wires as a packed word.  Input row `i` carries bit
/// `i` of the encoding (LSB first), matching both
/// [`BitPlaneTensor::to_matrix`] and the [`BitWord`] wire convention, so
/// the wires pass straight through.
fn input_word(b: &mut Builder, format: PrecisionFormat) -> BitWord {
    BitWord::new(b.inputs(format.bit_width()))
}

/// Emit a packed word as netlist outputs, row `i` = bit `i`.
fn output_planes(word: &BitWord) -> Vec<WireId> {
    word.bits().to_vec()
}

fn build_netlist(op: FpOp, format: PrecisionFormat, correction: bool) -> Netlist {
    let mut b = Builder::new();
    let x = input_word(&mut b, format);
    let out = if op.is_unary() {
        match op {
            FpOp::Sqrt => divsqrt::sqrt_core(&mut b, format, &x, correction),
            FpOp::Reciprocal => divsqrt::reciprocal_core(&mut b, format, &x, correction),
            FpOp::Rsqrt => divsqrt::rsqrt_core(&mut b, format, &x, correction),
            _ => unreachable!(),
        }
    } else {
        let y = input_word(&mut b, format);
        match op {
            FpOp::Add => pipeline::add_core(&mut b, format, &x, &y),
            FpOp::Mul => pipeline::mul_core(&mut b, format, &x, &y),
            FpOp::Div => divsqrt::div_core(&mut b, format, &x, &y, correction),
            _ => unreachable!(),
        }
    };
    b.finish(&output_planes(&out))
}

/// Netlist computing `(lt, eq, gt)` IEEE comparison of two packed words.
pub fn comparison_netlist(format: PrecisionFormat) -> Netlist {
    let mut b = Builder::new();
    let x = input_word(&mut b, format);
    let y = input_word(&mut b, format);
    let (lt, eq, gt) = pipeline::compare_core(&mut b, format, &x, &y);
    b.finish(&[lt, eq, gt])
}
