//! Transformer layers assembled from the gate-level floating-point
//! operators: linear maps, RMSNorm, rotary position embeddings, scaled
//! dot-product attention, and the full pre-norm block.
//!
//! Every layer is a fixed composition of `fp_*` calls, so with the
//! division/root correction on (the default) each one is bit-identical to
//! a host `f32` replay of the same operation sequence.  The host replays
//! live in this module next to the circuits ([`reference_linear`],
//! [`reference_rmsnorm`], ...) and double as the oracles for the tests.
//! All reductions run in a frozen order — ascending input index, rows
//! top-to-bottom, heads independent — because every bit-exactness claim
//! is order-sensitive.  The reference functions optionally replay a
//! different order (see [`ReductionOrder`]) to measure how far plain
//! associativity drift moves the results.
//!
//! Batched entry points (`*_rows`) pack independent rows into evaluation
//! lanes; batching never changes the per-row operation order, only how
//! many of them run per netlist pass.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::encoding::{BitPlaneTensor, PrecisionFormat};
use crate::fp::oracle::oracle_rsqrt;
use crate::fp::{FpError, FpUnit};
use crate::nonlinear::{reference_silu, reference_sincos, reference_softmax};
use crate::nonlinear::{NonlinearError, NonlinearUnit};

pub mod gradient;

const ONE_BITS: u32 = 0x3F80_0000;
const NEG_INF_BITS: u32 = 0xFF80_0000;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("input of {got} elements does not match the expected dimension {want}")]
    DimensionMismatch { want: usize, got: usize },
    #[error("tensor of {len} lanes does not split into rows of {width}")]
    RaggedRows { len: usize, width: usize },
    #[error("input must hold at least one element")]
    EmptyInput,
    #[error("rotary pairs need an even dimension, got {0}")]
    OddDimension(usize),
    #[error("bad configuration: {0}")]
    BadConfig(String),
    #[error("weight file rejected: {0}")]
    WeightFile(String),
    #[error(transparent)]
    Nonlinear(#[from] NonlinearError),
    #[error(transparent)]
    Fp(#[from] FpError),
}

/// The order a host reference folds a sum in.  The circuits always use
/// `Ascending`; the alternative exists so tests can measure the ULP cost
/// of plain reassociation against an otherwise identical reference.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReductionOrder {
    /// Index order 0, 1, 2, ... — the frozen circuit order.
    Ascending,
    /// Adjacent pairs swapped: 1, 0, 3, 2, ... (a minimal reassociation).
    PairSwapped,
    /// Fully reversed: n-1, ..., 1, 0 (the depth-scan reference order).
    Descending,
}

fn fold_order(n: usize, order: ReductionOrder) -> Vec<usize> {
    match order {
        ReductionOrder::Ascending => (0..n).collect(),
        ReductionOrder::PairSwapped => {
            let mut idx: Vec<usize> = (0..n).collect();
            for pair in idx.chunks_mut(2) {
                if pair.len() == 2 {
                    pair.swap(0, 1);
                }
            }
            idx
        }
        ReductionOrder::Descending => (0..n).rev().collect(),
    }
}

// ---------------------------------------------------------------------------
// Weights and configuration
// ---------------------------------------------------------------------------

/// A dense layer's parameters, stored as exact FP32 bit patterns:
/// `w` is row-major `[out_dim × in_dim]`, `b` has `out_dim` entries.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LinearWeights {
    out_dim: usize,
    in_dim: usize,
    w: Vec<u32>,
    b: Vec<u32>,
}

impl LinearWeights {
    pub fn new(out_dim: usize, in_dim: usize, w: Vec<u32>, b: Vec<u32>) -> Result<Self, NnError> {
        if out_dim == 0 || in_dim == 0 {
            return Err(NnError::EmptyInput);
        }
        if w.len() != out_dim * in_dim {
            return Err(NnError::DimensionMismatch {
                want: out_dim * in_dim,
                got: w.len(),
            });
        }
        if b.len() != out_dim {
            return Err(NnError::DimensionMismatch {
                want: out_dim,
                got: b.len(),
            });
        }
        Ok(LinearWeights {
            out_dim,
            in_dim,
            w,
            b,
        })
    }

    /// The identity map: unit diagonal, zero bias.
    pub fn identity(dim: usize) -> Self {
        let mut w = vec![0u32; dim * dim];
        for i in 0..dim {
            w[i * dim + i] = ONE_BITS;
        }
        LinearWeights {
            out_dim: dim,
            in_dim: dim,
            w,
            b: vec![0; dim],
        }
    }

    /// All-zero weights and bias.
    pub fn zeros(out_dim: usize, in_dim: usize) -> Self {
        LinearWeights {
            out_dim,
            in_dim,
            w: vec![0; out_dim * in_dim],
            b: vec![0; out_dim],
        }
    }

    /// Weights drawn uniformly from [0.5, 1.5), bias zero.  Positive
    /// same-magnitude draws keep accumulated sums cancellation-free,
    /// which is what keeps reassociation drift down at a few ULP instead
    /// of letting near-zero outputs amplify it without bound.
    pub fn seeded(out_dim: usize, in_dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = (0..out_dim * in_dim)
            .map(|_| uniform_half_to_three_halves(&mut rng))
            .collect();
        LinearWeights {
            out_dim,
            in_dim,
            w,
            b: vec![0; out_dim],
        }
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn weights(&self) -> &[u32] {
        &self.w
    }

    pub fn bias(&self) -> &[u32] {
        &self.b
    }

    pub fn weight(&self, row: usize, col: usize) -> u32 {
        self.w[row * self.in_dim + col]
    }

    /// Serialize as JSON with hex bit patterns, shape metadata, and a
    /// SHA-256 checksum over the parameter bytes.
    pub fn to_json(&self) -> String {
        let file = LinearWeightsFile {
            shape: [self.out_dim, self.in_dim],
            weights: self.w.iter().map(|v| format!("{v:08x}")).collect(),
            bias: self.b.iter().map(|v| format!("{v:08x}")).collect(),
            checksum: parameter_digest(self.out_dim, self.in_dim, &self.w, &self.b),
        };
        serde_json::to_string_pretty(&file).expect("weight serialization cannot fail")
    }

    /// Parse [`Self::to_json`] output, validating the shape and checksum.
    pub fn from_json(text: &str) -> Result<Self, NnError> {
        let file: LinearWeightsFile =
            serde_json::from_str(text).map_err(|e| NnError::WeightFile(e.to_string()))?;
        let [out_dim, in_dim] = file.shape;
        let parse = |field: &str, values: &[String]| -> Result<Vec<u32>, NnError> {
            values
                .iter()
                .map(|s| {
                    u32::from_str_radix(s, 16).map_err(|_| {
                        NnError::WeightFile(format!("{field} entry {s:?} is not a hex bit pattern"))
                    })
                })
                .collect()
        };
        let w = parse("weights", &file.weights)?;
        let b = parse("bias", &file.bias)?;
        let expected = parameter_digest(out_dim, in_dim, &w, &b);
        if expected != file.checksum {
            return Err(NnError::WeightFile(format!(
                "checksum mismatch: file says {}, parameters hash to {expected}",
                file.checksum
            )));
        }
        LinearWeights::new(out_dim, in_dim, w, b)
            .map_err(|e| NnError::WeightFile(format!("shape metadata is inconsistent: {e}")))
    }
}

#[derive(Serialize, Deserialize)]
struct LinearWeightsFile {
    shape: [usize; 2],
    weights: Vec<String>,
    bias: Vec<String>,
    checksum: String,
}

fn parameter_digest(out_dim: usize, in_dim: usize, w: &[u32], b: &[u32]) -> String {
    let mut hasher = Sha256::new();
    hasher.update((out_dim as u64).to_be_bytes());
    hasher.update((in_dim as u64).to_be_bytes());
    for &v in w.iter().chain(b.iter()) {
        hasher.update(v.to_be_bytes());
    }
    let digest = hasher.finalize();
    digest.iter().map(|byte| format!("{byte:02x}")).collect()
}

fn uniform_half_to_three_halves(rng: &mut ChaCha8Rng) -> u32 {
    (0.5 + rng.gen::<f32>()).to_bits()
}

/// Shape and constants of one transformer block.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformerBlockConfig {
    pub d_model: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub seq_len: usize,
    /// Base of the rotary frequency ladder (conventionally 10000).
    pub rope_base: f64,
    /// RMSNorm epsilon as an FP32 bit pattern.
    pub eps: u32,
}

impl TransformerBlockConfig {
    pub fn validate(&self) -> Result<(), NnError> {
        if self.d_model == 0 || self.n_heads == 0 || self.d_ff == 0 || self.seq_len == 0 {
            return Err(NnError::BadConfig(
                "all dimensions must be nonzero".to_string(),
            ));
        }
        if self.d_model % self.n_heads != 0 {
            return Err(NnError::BadConfig(format!(
                "d_model {} does not split into {} heads",
                self.d_model, self.n_heads
            )));
        }
        if !(self.rope_base.is_finite() && self.rope_base > 0.0) {
            return Err(NnError::BadConfig(format!(
                "rope base {} must be finite and positive",
                self.rope_base
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }
}

/// Parameters of one pre-norm block: RMSNorm gains, the four attention
/// projections, and the SiLU feed-forward pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransformerBlockWeights {
    pub attn_gamma: Vec<u32>,
    pub wq: LinearWeights,
    pub wk: LinearWeights,
    pub wv: LinearWeights,
    pub wo: LinearWeights,
    pub ffn_gamma: Vec<u32>,
    pub w_up: LinearWeights,
    pub w_down: LinearWeights,
}

impl TransformerBlockWeights {
    /// All-zero projections (unit norm gains): the block reduces to its
    /// residual connections and returns the input unchanged.
    pub fn zeros(config: &TransformerBlockConfig) -> Self {
        let d = config.d_model;
        TransformerBlockWeights {
            attn_gamma: vec![ONE_BITS; d],
            wq: LinearWeights::zeros(d, d),
            wk: LinearWeights::zeros(d, d),
            wv: LinearWeights::zeros(d, d),
            wo: LinearWeights::zeros(d, d),
            ffn_gamma: vec![ONE_BITS; d],
            w_up: LinearWeights::zeros(config.d_ff, d),
            w_down: LinearWeights::zeros(d, config.d_ff),
        }
    }

    /// Deterministic positive draws (matrix entries and gains uniform in
    /// [0.5, 1.5), biases zero), one substream per parameter group.
    pub fn seeded(config: &TransformerBlockConfig, seed: u64) -> Self {
        let d = config.d_model;
        let gains = |salt: u64| -> Vec<u32> {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ salt);
            (0..d).map(|_| uniform_half_to_three_halves(&mut rng)).collect()
        };
        TransformerBlockWeights {
            attn_gamma: gains(0x67),
            wq: LinearWeights::seeded(d, d, seed ^ 0x71),
            wk: LinearWeights::seeded(d, d, seed ^ 0x6B),
            wv: LinearWeights::seeded(d, d, seed ^ 0x76),
            wo: LinearWeights::seeded(d, d, seed ^ 0x6F),
            ffn_gamma: gains(0x66),
            w_up: LinearWeights::seeded(config.d_ff, d, seed ^ 0x75),
            w_down: LinearWeights::seeded(d, config.d_ff, seed ^ 0x64),
        }
    }

    fn validate(&self, config: &TransformerBlockConfig) -> Result<(), NnError> {
        config.validate()?;
        let d = config.d_model;
        let square =
            |w: &LinearWeights| -> bool { w.out_dim == d && w.in_dim == d };
        if self.attn_gamma.len() != d || self.ffn_gamma.len() != d {
            return Err(NnError::DimensionMismatch {
                want: d,
                got: if self.attn_gamma.len() != d {
                    self.attn_gamma.len()
                } else {
                    self.ffn_gamma.len()
                },
            });
        }
        if !(square(&self.wq) && square(&self.wk) && square(&self.wv) && square(&self.wo)) {
            return Err(NnError::BadConfig(
                "attention projections must be d_model x d_model".to_string(),
            ));
        }
        if self.w_up.out_dim != config.d_ff || self.w_up.in_dim != d {
            return Err(NnError::BadConfig(
                "up projection must be d_ff x d_model".to_string(),
            ));
        }
        if self.w_down.out_dim != d || self.w_down.in_dim != config.d_ff {
            return Err(NnError::BadConfig(
                "down projection must be d_model x d_ff".to_string(),
            ));
        }
        Ok(())
    }
}

/// The rotary frequency ladder `base^(-2i/d)` for pair index `i`,
/// precomputed on the host in f64 and rounded once to FP32.  Both the
/// circuit and the host reference read this same table, so the ladder is
/// shared down to the bit.
pub fn rope_frequencies(d: usize, base: f64) -> Vec<u32> {
    (0..d / 2)
        .map(|i| (base.powf(-((2 * i) as f64) / d as f64) as f32).to_bits())
        .collect()
}

// ---------------------------------------------------------------------------
// The layer circuits
// ---------------------------------------------------------------------------

/// Layer evaluator: a [`NonlinearUnit`] (and through it the arithmetic
/// unit and spike accounting) plus the layer compositions.
pub struct NnUnit {
    nl: NonlinearUnit,
}

impl Default for NnUnit {
    fn default() -> Self {
        Self::new()
    }
}

impl NnUnit {
    pub fn new() -> Self {
        NnUnit {
            nl: NonlinearUnit::new(),
        }
    }

    /// Switch the division/root correction stage.  Off, divisions and
    /// roots are merely faithful and the layer outputs drift a ULP or
    /// two from the host references that assume correct rounding.
    pub fn with_correction(correction: bool) -> Self {
        NnUnit {
            nl: NonlinearUnit::with_correction(correction),
        }
    }

    pub fn nonlinear(&self) -> &NonlinearUnit {
        &self.nl
    }

    pub fn fp_unit(&self) -> &FpUnit {
        self.nl.fp_unit()
    }

    pub fn spike_count(&self) -> u64 {
        self.nl.spike_count()
    }

    pub fn clear_spike_count(&self) {
        self.nl.clear_spike_count()
    }

    fn expect_fp32(&self, t: &BitPlaneTensor) -> Result<(), NnError> {
        if t.format() != PrecisionFormat::Fp32 {
            return Err(NnError::Nonlinear(NonlinearError::UnsupportedFormat(
                t.format().name(),
            )));
        }
        Ok(())
    }

    /// `y_j = (((w_j0 * x_0) + w_j1 * x_1) + ...) + b_j` — products
    /// accumulated in ascending input order, bias added last.
    ///
    /// `x` holds one vector of `in_dim` elements.
    pub fn linear_forward(
        &self,
        x: &BitPlaneTensor,
        w: &LinearWeights,
    ) -> Result<BitPlaneTensor, NnError> {
        self.expect_fp32(x)?;
        if x.len() != w.in_dim {
            return Err(NnError::DimensionMismatch {
                want: w.in_dim,
                got: x.len(),
            });
        }
        self.linear_rows(x, w)
    }

    /// [`Self::linear_forward`] over a row-major batch: `x` holds
    /// `k * in_dim` elements and the result holds `k * out_dim`.  Rows
    /// are independent, so they ride along as extra evaluation lanes;
    /// the per-row operation order is unchanged.
    pub fn linear_rows(
        &self,
        x: &BitPlaneTensor,
        w: &LinearWeights,
    ) -> Result<BitPlaneTensor, NnError> {
        self.expect_fp32(x)?;
        if x.is_empty() {
            return Err(NnError::EmptyInput);
        }
        if x.len() % w.in_dim != 0 {
            return Err(NnError::RaggedRows {
                len: x.len(),
                width: w.in_dim,
            });
        }
        let rows = x.len() / w.in_dim;
        let xp = x.bit_patterns();
        let fp = self.fp_unit();

        // Lane (r, j): weight column i broadcast over rows, input element
        // i broadcast over outputs.
        let lanes = rows * w.out_dim;
        let weight_col = |i: usize| -> Result<BitPlaneTensor, NnError> {
            let pats: Vec<u64> = (0..lanes)
                .map(|lane| w.w[(lane % w.out_dim) * w.in_dim + i] as u64)
                .collect();
            tensor(&pats)
        };
        let input_col = |i: usize| -> Result<BitPlaneTensor, NnError> {
            let pats: Vec<u64> = (0..lanes)
                .map(|lane| xp[(lane / w.out_dim) * w.in_dim + i])
                .collect();
            tensor(&pats)
        };

        let mut acc = fp.fp_mul(&weight_col(0)?, &input_col(0)?)?;
        for i in 1..w.in_dim {
            let p = fp.fp_mul(&weight_col(i)?, &input_col(i)?)?;
            acc = fp.fp_add(&acc, &p)?;
        }
        let bias: Vec<u64> = (0..lanes)
            .map(|lane| w.b[lane % w.out_dim] as u64)
            .collect();
        Ok(fp.fp_add(&acc, &tensor(&bias)?)?)
    }

    /// `out_i = (gamma_i * x_i) * r` with
    /// `r = rsqrt((x_0^2 + x_1^2 + ...) / d + eps)`: square, accumulate
    /// ascending, divide by the element count, add epsilon, take the
    /// reciprocal square root as one operation, scale.
    pub fn rmsnorm_forward(
        &self,
        x: &BitPlaneTensor,
        gamma: &[u32],
        eps: u32,
    ) -> Result<BitPlaneTensor, NnError> {
        self.expect_fp32(x)?;
        if x.len() != gamma.len() {
            return Err(NnError::DimensionMismatch {
                want: gamma.len(),
                got: x.len(),
            });
        }
        self.rmsnorm_rows(x, gamma, eps)
    }

    /// [`Self::rmsnorm_forward`] over a row-major batch of
    /// `gamma.len()`-wide rows, normalized independently.
    pub fn rmsnorm_rows(
        &self,
        x: &BitPlaneTensor,
        gamma: &[u32],
        eps: u32,
    ) -> Result<BitPlaneTensor, NnError> {
        self.expect_fp32(x)?;
        let d = gamma.len();
        if d == 0 || x.is_empty() {
            return Err(NnError::EmptyInput);
        }
        if x.len() % d != 0 {
            return Err(NnError::RaggedRows { len: x.len(), width: d });
        }
        let rows = x.len() / d;
        let fp = self.fp_unit();

        let sq = fp.fp_mul(x, x)?;
        let sq_pat = sq.bit_patterns();
        let mut sum = column(&sq_pat, rows, d, 0)?;
        for i in 1..d {
            let c = column(&sq_pat, rows, d, i)?;
            sum = fp.fp_add(&sum, &c)?;
        }
        let count = BitPlaneTensor::splat(PrecisionFormat::Fp32, (d as f32).to_bits() as u64, rows);
        let mean = fp.fp_div(&sum, &count)?;
        let shifted = fp.fp_add(&mean, &splat(eps, rows))?;
        let r = fp.fp_rsqrt(&shifted)?;

        let gamma_b: Vec<u64> = (0..x.len()).map(|i| gamma[i % d] as u64).collect();
        let scaled = fp.fp_mul(&tensor(&gamma_b)?, x)?;
        let r_pat = r.bit_patterns();
        let r_b: Vec<u64> = (0..x.len()).map(|i| r_pat[i / d]).collect();
        Ok(fp.fp_mul(&scaled, &tensor(&r_b)?)?)
    }

    /// Rotate each adjacent pair `(x_{2i}, x_{2i+1})` by
    /// `theta_i = position * base^(-2i/d)` where `d = x.len()`:
    /// `(c*x_e - s*x_o, s*x_e + c*x_o)` with one rounding per operation.
    pub fn rope_apply(
        &self,
        x: &BitPlaneTensor,
        position: usize,
        config: &TransformerBlockConfig,
    ) -> Result<BitPlaneTensor, NnError> {
        self.expect_fp32(x)?;
        let d = x.len();
        if d == 0 {
            return Err(NnError::EmptyInput);
        }
        if d % 2 != 0 {
            return Err(NnError::OddDimension(d));
        }
        let fp = self.fp_unit();
        let pairs = d / 2;
        let freqs: Vec<u64> = rope_frequencies(d, config.rope_base)
            .into_iter()
            .map(u64::from)
            .collect();
        let theta = fp.fp_mul(
            &tensor(&freqs)?,
            &splat((position as f32).to_bits(), pairs),
        )?;
        let (sin, cos) = self.nl.fp_sincos(&theta)?;

        let xp = x.bit_patterns();
        let even: Vec<u64> = (0..pairs).map(|i| xp[2 * i]).collect();
        let odd: Vec<u64> = (0..pairs).map(|i| xp[2 * i + 1]).collect();
        let xe = tensor(&even)?;
        let xo = tensor(&odd)?;

        let ce = fp.fp_mul(&cos, &xe)?;
        let so = fp.fp_mul(&sin, &xo)?;
        let se = fp.fp_mul(&sin, &xe)?;
        let co = fp.fp_mul(&cos, &xo)?;
        let rot_e = fp.fp_sub(&ce, &so)?;
        let rot_o = fp.fp_add(&se, &co)?;

        let ep = rot_e.bit_patterns();
        let op = rot_o.bit_patterns();
        let mut out = Vec::with_capacity(d);
        for i in 0..pairs {
            out.push(ep[i]);
            out.push(op[i]);
        }
        tensor(&out)
    }

    /// Scaled dot-product attention over `seq_len` rows of `d_model`
    /// laid out row-major in `q`, `k`, and `v`.  Per head: scores
    /// `q_r . k_c` accumulated in ascending index order, divided by
    /// `sqrt(head_dim)` (computed in-circuit), optionally masked with
    /// -Inf strictly above the diagonal, softmax per row, then the
    /// values aggregated in ascending column order.
    pub fn attention_forward(
        &self,
        q: &BitPlaneTensor,
        k: &BitPlaneTensor,
        v: &BitPlaneTensor,
        config: &TransformerBlockConfig,
        causal: bool,
    ) -> Result<BitPlaneTensor, NnError> {
        config.validate()?;
        for t in [q, k, v] {
            self.expect_fp32(t)?;
            if t.len() != config.seq_len * config.d_model {
                return Err(NnError::DimensionMismatch {
                    want: config.seq_len * config.d_model,
                    got: t.len(),
                });
            }
        }
        let seq = config.seq_len;
        let d_model = config.d_model;
        let heads = config.n_heads;
        let dk = config.head_dim();
        let fp = self.fp_unit();

        let qp = q.bit_patterns();
        let kp = k.bit_patterns();
        let vp = v.bit_patterns();

        // Scores, lane (h, r, c): q element i broadcast over columns,
        // k element i gathered per column.
        let lanes = heads * seq * seq;
        let q_col = |i: usize| -> Result<BitPlaneTensor, NnError> {
            let pats: Vec<u64> = (0..lanes)
                .map(|lane| {
                    let h = lane / (seq * seq);
                    let r = lane / seq % seq;
                    qp[r * d_model + h * dk + i]
                })
                .collect();
            tensor(&pats)
        };
        let k_col = |i: usize| -> Result<BitPlaneTensor, NnError> {
            let pats: Vec<u64> = (0..lanes)
                .map(|lane| {
                    let h = lane / (seq * seq);
                    let c = lane % seq;
                    kp[c * d_model + h * dk + i]
                })
                .collect();
            tensor(&pats)
        };
        let mut scores = fp.fp_mul(&q_col(0)?, &k_col(0)?)?;
        for i in 1..dk {
            let p = fp.fp_mul(&q_col(i)?, &k_col(i)?)?;
            scores = fp.fp_add(&scores, &p)?;
        }

        let root = fp.fp_sqrt(&splat((dk as f32).to_bits(), 1))?;
        let root_pat = root.bit_patterns()[0];
        let scaled = fp.fp_div(&scores, &tensor(&vec![root_pat; lanes])?)?;

        let masked = if causal {
            let mask: Vec<u64> = (0..lanes)
                .map(|lane| {
                    let r = lane / seq % seq;
                    let c = lane % seq;
                    if c > r { NEG_INF_BITS as u64 } else { 0 }
                })
                .collect();
            fp.fp_add(&scaled, &tensor(&mask)?)?
        } else {
            scaled
        };

        let probs = self.nl.fp_softmax_rows(&masked, seq)?;
        let pp = probs.bit_patterns();

        // Aggregation, lane (r, h*dk + j): probability for column c
        // broadcast over the head's output elements.
        let out_lanes = seq * d_model;
        let prob_col = |c: usize| -> Result<BitPlaneTensor, NnError> {
            let pats: Vec<u64> = (0..out_lanes)
                .map(|lane| {
                    let r = lane / d_model;
                    let h = lane % d_model / dk;
                    pp[(h * seq + r) * seq + c]
                })
                .collect();
            tensor(&pats)
        };
        let value_row = |c: usize| -> Result<BitPlaneTensor, NnError> {
            let pats: Vec<u64> = (0..out_lanes)
                .map(|lane| vp[c * d_model + lane % d_model])
                .collect();
            tensor(&pats)
        };
        let mut out = fp.fp_mul(&prob_col(0)?, &value_row(0)?)?;
        for c in 1..seq {
            let p = fp.fp_mul(&prob_col(c)?, &value_row(c)?)?;
            out = fp.fp_add(&out, &p)?;
        }
        Ok(out)
    }

    /// One pre-norm block over `seq_len` rows laid out row-major:
    /// RMSNorm, causally masked attention, residual add, RMSNorm,
    /// feed-forward (up projection, SiLU, down projection), residual
    /// add.  Rotary embeddings are applied by the caller to `q`/`k`
    /// streams where wanted; the block itself is position-agnostic.
    pub fn transformer_block_forward(
        &self,
        x: &BitPlaneTensor,
        weights: &TransformerBlockWeights,
        config: &TransformerBlockConfig,
    ) -> Result<BitPlaneTensor, NnError> {
        weights.validate(config)?;
        self.expect_fp32(x)?;
        if x.len() != config.seq_len * config.d_model {
            return Err(NnError::DimensionMismatch {
                want: config.seq_len * config.d_model,
                got: x.len(),
            });
        }
        let fp = self.fp_unit();

        let h = self.rmsnorm_rows(x, &weights.attn_gamma, config.eps)?;
        let q = self.linear_rows(&h, &weights.wq)?;
        let k = self.linear_rows(&h, &weights.wk)?;
        let v = self.linear_rows(&h, &weights.wv)?;
        let attn = self.attention_forward(&q, &k, &v, config, true)?;
        let o = self.linear_rows(&attn, &weights.wo)?;
        let res = fp.fp_add(x, &o)?;

        let h2 = self.rmsnorm_rows(&res, &weights.ffn_gamma, config.eps)?;
        let up = self.linear_rows(&h2, &weights.w_up)?;
        let act = self.nl.fp_silu(&up)?;
        let down = self.linear_rows(&act, &weights.w_down)?;
        Ok(fp.fp_add(&res, &down)?)
    }
}

/// Verify the premise that lets training treat spike encoding and
/// decoding as an identity: `decode(f_circuit(encode(x)))` must equal
/// the host replay `f_host(x)` bit for bit.  Returns the number of
/// mismatching output elements (expected 0).
pub fn ste_identity_check<C, H>(inputs: &[u32], circuit: C, host: H) -> Result<usize, NnError>
where
    C: FnOnce(&BitPlaneTensor) -> Result<BitPlaneTensor, NnError>,
    H: FnOnce(&[u32]) -> Vec<u32>,
{
    let encoded: Vec<u64> = inputs.iter().map(|&p| p as u64).collect();
    let got = circuit(&tensor(&encoded)?)?.bit_patterns();
    let want = host(inputs);
    if got.len() != want.len() {
        return Err(NnError::DimensionMismatch {
            want: want.len(),
            got: got.len(),
        });
    }
    Ok(got
        .iter()
        .zip(want.iter())
        .filter(|&(&g, &w)| g != w as u64)
        .count())
}

fn tensor(patterns: &[u64]) -> Result<BitPlaneTensor, NnError> {
    Ok(BitPlaneTensor::from_bit_patterns(PrecisionFormat::Fp32, patterns)
        .map_err(FpError::from)?)
}

fn splat(bits: u32, n: usize) -> BitPlaneTensor {
    BitPlaneTensor::splat(PrecisionFormat::Fp32, bits as u64, n)
}

fn column(src: &[u64], rows: usize, width: usize, i: usize) -> Result<BitPlaneTensor, NnError> {
    let col: Vec<u64> = (0..rows).map(|r| src[r * width + i]).collect();
    tensor(&col)
}

// ---------------------------------------------------------------------------
// Host references: identical operation sequences in host f32.
// ---------------------------------------------------------------------------

fn f(bits: u32) -> f32 {
    f32::from_bits(bits)
}

fn canon(v: f32) -> u32 {
    if v.is_nan() {
        PrecisionFormat::Fp32.qnan() as u32
    } else {
        v.to_bits()
    }
}

/// Host replay of [`NnUnit::linear_forward`], folding the products in
/// the given order (the circuit itself always uses `Ascending`).
pub fn reference_linear(x: &[u32], w: &LinearWeights, order: ReductionOrder) -> Vec<u32> {
    assert_eq!(x.len(), w.in_dim, "reference input length");
    let idx = fold_order(w.in_dim, order);
    (0..w.out_dim)
        .map(|j| {
            let mut acc = f(w.weight(j, idx[0])) * f(x[idx[0]]);
            for &i in &idx[1..] {
                acc += f(w.weight(j, i)) * f(x[i]);
            }
            canon(acc + f(w.b[j]))
        })
        .collect()
}

/// Host replay of [`NnUnit::rmsnorm_forward`].  The reciprocal square
/// root is a single correctly rounded operation, mirroring the circuit
/// with correction on.
pub fn reference_rmsnorm(x: &[u32], gamma: &[u32], eps: u32, order: ReductionOrder) -> Vec<u32> {
    let r = reference_rms_scale(x, eps, order, true);
    scale_rmsnorm(x, gamma, r)
}

/// Host replay of the uncorrected circuit: the reciprocal square root
/// decays into a correctly rounded square root followed by a correctly
/// rounded reciprocal — two roundings instead of one.
pub fn reference_rmsnorm_uncorrected(
    x: &[u32],
    gamma: &[u32],
    eps: u32,
    order: ReductionOrder,
) -> Vec<u32> {
    let r = reference_rms_scale(x, eps, order, false);
    scale_rmsnorm(x, gamma, r)
}

fn reference_rms_scale(x: &[u32], eps: u32, order: ReductionOrder, fused: bool) -> f32 {
    assert!(!x.is_empty(), "reference input length");
    let idx = fold_order(x.len(), order);
    let mut sum = f(x[idx[0]]) * f(x[idx[0]]);
    for &i in &idx[1..] {
        sum += f(x[i]) * f(x[i]);
    }
    let shifted = sum / x.len() as f32 + f(eps);
    if fused {
        f(oracle_rsqrt(PrecisionFormat::Fp32, shifted.to_bits() as u64) as u32)
    } else {
        1.0 / shifted.sqrt()
    }
}

fn scale_rmsnorm(x: &[u32], gamma: &[u32], r: f32) -> Vec<u32> {
    assert_eq!(x.len(), gamma.len(), "reference gain length");
    x.iter()
        .zip(gamma.iter())
        .map(|(&xi, &gi)| canon(f(gi) * f(xi) * r))
        .collect()
}

/// Host replay of [`NnUnit::rope_apply`], reading the same frequency
/// table and the sin/cos pipeline replay.
pub fn reference_rope(x: &[u32], position: usize, config: &TransformerBlockConfig) -> Vec<u32> {
    assert!(x.len() % 2 == 0, "reference pair dimension");
    let freqs = rope_frequencies(x.len(), config.rope_base);
    let mut out = Vec::with_capacity(x.len());
    for (i, &freq) in freqs.iter().enumerate() {
        let theta = position as f32 * f(freq);
        let (s_bits, c_bits) = reference_sincos(theta.to_bits());
        let (s, c) = (f(s_bits), f(c_bits));
        let (xe, xo) = (f(x[2 * i]), f(x[2 * i + 1]));
        out.push(canon(c * xe - s * xo));
        out.push(canon(s * xe + c * xo));
    }
    out
}

/// Host replay of [`NnUnit::attention_forward`].  The dot products and
/// the value aggregation fold in the given order; the softmax reduction
/// itself always runs ascending (shared with the circuit).
pub fn reference_attention(
    q: &[u32],
    k: &[u32],
    v: &[u32],
    config: &TransformerBlockConfig,
    causal: bool,
    order: ReductionOrder,
) -> Vec<u32> {
    let seq = config.seq_len;
    let d_model = config.d_model;
    let dk = config.head_dim();
    for t in [q, k, v] {
        assert_eq!(t.len(), seq * d_model, "reference attention shape");
    }
    let idx = fold_order(dk, order);
    let col_idx = fold_order(seq, order);
    let root = (dk as f32).sqrt();
    let mut out = vec![0u32; seq * d_model];
    for h in 0..config.n_heads {
        let off = h * dk;
        let mut probs = Vec::with_capacity(seq);
        for r in 0..seq {
            let row: Vec<u32> = (0..seq)
                .map(|c| {
                    let mut acc =
                        f(q[r * d_model + off + idx[0]]) * f(k[c * d_model + off + idx[0]]);
                    for &i in &idx[1..] {
                        acc += f(q[r * d_model + off + i]) * f(k[c * d_model + off + i]);
                    }
                    let mut s = acc / root;
                    if causal && c > r {
                        s += f32::NEG_INFINITY;
                    }
                    canon(s)
                })
                .collect();
            probs.push(reference_softmax(&row));
        }
        for r in 0..seq {
            for j in 0..dk {
                let mut acc =
                    f(probs[r][col_idx[0]]) * f(v[col_idx[0] * d_model + off + j]);
                for &c in &col_idx[1..] {
                    acc += f(probs[r][c]) * f(v[c * d_model + off + j]);
                }
                out[r * d_model + off + j] = canon(acc);
            }
        }
    }
    out
}

/// Host replay of [`NnUnit::transformer_block_forward`].
pub fn reference_transformer_block(
    x: &[u32],
    weights: &TransformerBlockWeights,
    config: &TransformerBlockConfig,
    order: ReductionOrder,
) -> Vec<u32> {
    let seq = config.seq_len;
    let d = config.d_model;
    assert_eq!(x.len(), seq * d, "reference block shape");
    let per_row = |src: &[u32], f: &dyn Fn(&[u32]) -> Vec<u32>, width: usize| -> Vec<u32> {
        src.chunks(width).flat_map(f).collect()
    };

    let h = per_row(x, &|row| reference_rmsnorm(row, &weights.attn_gamma, config.eps, order), d);
    let q = per_row(&h, &|row| reference_linear(row, &weights.wq, order), d);
    let k = per_row(&h, &|row| reference_linear(row, &weights.wk, order), d);
    let v = per_row(&h, &|row| reference_linear(row, &weights.wv, order), d);
    let attn = reference_attention(&q, &k, &v, config, true, order);
    let o = per_row(&attn, &|row| reference_linear(row, &weights.wo, order), d);
    let res: Vec<u32> = x
        .iter()
        .zip(o.iter())
        .map(|(&a, &b)| canon(f(a) + f(b)))
        .collect();

    let h2 = per_row(&res, &|row| reference_rmsnorm(row, &weights.ffn_gamma, config.eps, order), d);
    let up = per_row(&h2, &|row| reference_linear(row, &weights.w_up, order), d);
    let act: Vec<u32> = up.iter().map(|&b| reference_silu(b)).collect();
    let down = per_row(&act, &|row| reference_linear(row, &weights.w_down, order), config.d_ff);
    res.iter()
        .zip(down.iter())
        .map(|(&a, &b)| canon(f(a) + f(b)))
        .collect()
}
