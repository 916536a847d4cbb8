//! ULP and MSE measurement machinery: the ordered-index ULP distance,
//! report aggregation (max / mean / 0-ULP rate / max absolute error),
//! the depth-scaling scan for stacked transformer blocks, and the
//! encoding-fidelity benchmark comparing spatial, rate, and
//! time-to-first-spike codings.

use std::fmt::Write as _;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::encoding::{
    benchmark_values, decode_bits, rate_decode, rate_encode, truncate_planes, ttfs_decode,
    ttfs_encode, BitPlaneTensor, PrecisionFormat,
};
use crate::nn::{
    reference_transformer_block, NnError, NnUnit, ReductionOrder, TransformerBlockConfig,
    TransformerBlockWeights,
};

#[derive(Debug, Error)]
pub enum FidelityError {
    #[error("tensors of {got} and {want} elements cannot be compared")]
    ShapeMismatch { want: usize, got: usize },
    #[error("cannot compare {got} against {want} patterns")]
    FormatMismatch {
        want: &'static str,
        got: &'static str,
    },
    #[error(transparent)]
    Nn(#[from] NnError),
}

// ---------------------------------------------------------------------------
// ULP distance
// ---------------------------------------------------------------------------

/// The monotone integer index of a non-NaN pattern: magnitude negated
/// for negative values, so consecutive indices are consecutive
/// representable values with -0 and +0 sharing index 0 and the
/// infinities sitting at the extremes.
///
/// Panics on NaN: distances to NaN are a policy question the tensor
/// comparison handles before coming here.
pub fn ordered_index(format: PrecisionFormat, bits: u64) -> i64 {
    assert!(
        !format.is_nan(bits),
        "ordered_index is undefined for NaN patterns"
    );
    let magnitude = (bits & ((1u64 << (format.bit_width() - 1)) - 1)) as i64;
    if format.sign_bit(bits) {
        -magnitude
    } else {
        magnitude
    }
}

/// Representable values stepped over between `a` and `b` in the
/// ordered-index sense: 0 for equal values (including -0 vs +0),
/// 1 for adjacent neighbours.
pub fn ulp_distance_in(format: PrecisionFormat, a: u64, b: u64) -> u64 {
    ordered_index(format, a).abs_diff(ordered_index(format, b))
}

/// [`ulp_distance_in`] for FP32 bit patterns.
pub fn ulp_distance(a: u32, b: u32) -> u64 {
    ulp_distance_in(PrecisionFormat::Fp32, a as u64, b as u64)
}

/// The largest distance the format can produce: -Inf to +Inf.  A
/// NaN-vs-number pair is charged this much.
pub fn max_distance(format: PrecisionFormat) -> u64 {
    2 * format.infinity(false)
}

// ---------------------------------------------------------------------------
// Report aggregation
// ---------------------------------------------------------------------------

/// Aggregated comparison of one batch of outputs against a reference.
#[derive(Debug, Clone, PartialEq)]
pub struct UlpReport {
    pub max_ulp: u64,
    pub mean_ulp: f64,
    /// Fraction of samples that matched exactly (NaN-vs-NaN included).
    pub zero_ulp_rate: f64,
    pub max_abs_err: f64,
    pub sample_count: usize,
    /// Samples where exactly one side was NaN; each is charged
    /// [`max_distance`] in the ULP columns.
    pub nan_mismatches: usize,
}

/// Streaming accumulator behind [`UlpReport`].  Counts are exact
/// integers; the mean is divided out only when the report is taken.
/// Merging two accumulators is associative, so batches can be measured
/// in any grouping.
#[derive(Debug, Clone, Default)]
pub struct UlpAccumulator {
    max_ulp: u64,
    total_ulp: u128,
    zero_matches: usize,
    max_abs_err: f64,
    sample_count: usize,
    nan_mismatches: usize,
}

impl UlpAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&mut self, format: PrecisionFormat, got: u64, want: u64) {
        self.sample_count += 1;
        match (format.is_nan(got), format.is_nan(want)) {
            (true, true) => {
                self.zero_matches += 1;
            }
            (false, false) => {
                let d = ulp_distance_in(format, got, want);
                self.max_ulp = self.max_ulp.max(d);
                self.total_ulp += d as u128;
                if d == 0 {
                    self.zero_matches += 1;
                }
                let err = (decode_bits(format, got) - decode_bits(format, want)).abs();
                if err.is_nan() {
                    // Inf vs Inf of the same sign has distance 0 but an
                    // undefined difference; charge nothing.
                } else if err > self.max_abs_err {
                    self.max_abs_err = err;
                }
            }
            _ => {
                let d = max_distance(format);
                self.nan_mismatches += 1;
                self.max_ulp = self.max_ulp.max(d);
                self.total_ulp += d as u128;
                self.max_abs_err = f64::INFINITY;
            }
        }
    }

    pub fn merge(&mut self, other: &UlpAccumulator) {
        self.max_ulp = self.max_ulp.max(other.max_ulp);
        self.total_ulp += other.total_ulp;
        self.zero_matches += other.zero_matches;
        self.max_abs_err = self.max_abs_err.max(other.max_abs_err);
        self.sample_count += other.sample_count;
        self.nan_mismatches += other.nan_mismatches;
    }

    pub fn report(&self) -> UlpReport {
        let n = self.sample_count;
        UlpReport {
            max_ulp: self.max_ulp,
            mean_ulp: if n == 0 {
                0.0
            } else {
                self.total_ulp as f64 / n as f64
            },
            zero_ulp_rate: if n == 0 {
                1.0
            } else {
                self.zero_matches as f64 / n as f64
            },
            max_abs_err: self.max_abs_err,
            sample_count: n,
            nan_mismatches: self.nan_mismatches,
        }
    }
}

/// Compare raw bit patterns of one format.
pub fn compare_patterns(
    format: PrecisionFormat,
    got: &[u64],
    want: &[u64],
) -> Result<UlpReport, FidelityError> {
    if got.len() != want.len() {
        return Err(FidelityError::ShapeMismatch {
            want: want.len(),
            got: got.len(),
        });
    }
    let mut acc = UlpAccumulator::new();
    for (&g, &w) in got.iter().zip(want.iter()) {
        acc.record(format, g, w);
    }
    Ok(acc.report())
}

/// Compare two tensors element by element.
pub fn compare_tensors(
    got: &BitPlaneTensor,
    want: &BitPlaneTensor,
) -> Result<UlpReport, FidelityError> {
    if got.format() != want.format() {
        return Err(FidelityError::FormatMismatch {
            want: want.format().name(),
            got: got.format().name(),
        });
    }
    compare_patterns(got.format(), &got.bit_patterns(), &want.bit_patterns())
}

// ---------------------------------------------------------------------------
// Depth scan
// ---------------------------------------------------------------------------

/// One depth level of [`depth_scan`].
#[derive(Debug, Clone)]
pub struct DepthReport {
    pub depth: usize,
    pub report: UlpReport,
}

fn depth_scan_config() -> TransformerBlockConfig {
    TransformerBlockConfig {
        d_model: 16,
        n_heads: 2,
        d_ff: 32,
        seq_len: 4,
        rope_base: 10000.0,
        eps: 1e-5f32.to_bits(),
    }
}

/// Stack seeded transformer blocks and measure, after each one, how far
/// the circuit activations have drifted from a host reference that folds
/// every accumulation in *reversed* order.  Both sides start from the
/// same input and evolve independently, so the reports show how plain
/// reassociation divergence compounds with depth.  Positive weight and
/// input draws keep the comparison meaningful: with zero-mean data,
/// cancellation near zero would let the ULP distance between two equally
/// valid orders blow up without bound.
pub fn depth_scan(block_count: usize, seed: u64) -> Result<Vec<DepthReport>, FidelityError> {
    let config = depth_scan_config();
    let nn = NnUnit::new();
    let n = config.seq_len * config.d_model;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let input: Vec<u32> = (0..n).map(|_| (0.5 + rng.gen::<f32>()).to_bits()).collect();

    let mut circuit = BitPlaneTensor::from_bit_patterns(
        PrecisionFormat::Fp32,
        &input.iter().map(|&p| p as u64).collect::<Vec<_>>(),
    )
    .map_err(|e| NnError::Fp(e.into()))?;
    let mut host = input;

    let mut out = Vec::with_capacity(block_count);
    for depth in 1..=block_count {
        let weights = TransformerBlockWeights::seeded(&config, seed ^ (depth as u64) << 8);
        circuit = nn.transformer_block_forward(&circuit, &weights, &config)?;
        host = reference_transformer_block(&host, &weights, &config, ReductionOrder::Descending);
        let want: Vec<u64> = host.iter().map(|&p| p as u64).collect();
        let report = compare_patterns(PrecisionFormat::Fp32, &circuit.bit_patterns(), &want)?;
        out.push(DepthReport { depth, report });
    }
    Ok(out)
}

/// CSV for the depth scan: `depth,max_ulp,mean_ulp,zero_ulp_rate,max_abs_err`.
pub fn depth_scan_csv(reports: &[DepthReport]) -> String {
    let mut out = String::from("depth,max_ulp,mean_ulp,zero_ulp_rate,max_abs_err\n");
    for r in reports {
        writeln!(
            out,
            "{},{},{},{},{}",
            r.depth, r.report.max_ulp, r.report.mean_ulp, r.report.zero_ulp_rate,
            r.report.max_abs_err
        )
        .expect("string write cannot fail");
    }
    out
}

// ---------------------------------------------------------------------------
// Encoding benchmark
// ---------------------------------------------------------------------------

/// The codings under comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EncodingScheme {
    /// All 32 bit planes: lossless by construction.
    Spatial,
    /// Only the top `k` planes kept.
    SpatialTruncated(usize),
    /// Bernoulli rate coding over the given number of timesteps.
    Rate(usize),
    /// Time-to-first-spike coding over the given number of timesteps.
    Ttfs(usize),
}

impl EncodingScheme {
    pub fn name(self) -> &'static str {
        match self {
            EncodingScheme::Spatial => "spatial",
            EncodingScheme::SpatialTruncated(_) => "spatial_truncated",
            EncodingScheme::Rate(_) => "rate",
            EncodingScheme::Ttfs(_) => "ttfs",
        }
    }

    /// Channel count / timestep count, as reported in the CSV.
    pub fn steps(self) -> usize {
        match self {
            EncodingScheme::Spatial => 32,
            EncodingScheme::SpatialTruncated(k) => k,
            EncodingScheme::Rate(s) | EncodingScheme::Ttfs(s) => s,
        }
    }
}

/// Mean squared reconstruction error over repeated trials.
#[derive(Debug, Clone)]
pub struct MseReport {
    pub scheme: EncodingScheme,
    pub n: usize,
    pub mse_mean: f64,
    pub mse_std: f64,
    pub seed: u64,
}

const ENCODING_TRIALS: usize = 10;

/// Encode and decode `n` draws from the benchmark distribution and
/// report the reconstruction MSE, mean and standard deviation over
/// repeated seeded trials.
pub fn encoding_benchmark(scheme: EncodingScheme, n: usize, seed: u64) -> MseReport {
    assert!(n >= 1, "benchmark needs at least one sample");
    let mut seeder = ChaCha8Rng::seed_from_u64(seed);
    let mut trial_mse = Vec::with_capacity(ENCODING_TRIALS);
    for _ in 0..ENCODING_TRIALS {
        let trial_seed: u64 = seeder.gen();
        let values = benchmark_values(n, trial_seed);
        let decoded = reconstruct(scheme, &values, trial_seed);
        let mse = values
            .iter()
            .zip(decoded.iter())
            .map(|(v, d)| (v - d) * (v - d))
            .sum::<f64>()
            / n as f64;
        trial_mse.push(mse);
    }
    let mean = trial_mse.iter().sum::<f64>() / trial_mse.len() as f64;
    let var = trial_mse
        .iter()
        .map(|m| (m - mean) * (m - mean))
        .sum::<f64>()
        / trial_mse.len() as f64;
    MseReport {
        scheme,
        n,
        mse_mean: mean,
        mse_std: var.sqrt(),
        seed,
    }
}

fn reconstruct(scheme: EncodingScheme, values: &[f64], trial_seed: u64) -> Vec<f64> {
    match scheme {
        EncodingScheme::Spatial => {
            let t = BitPlaneTensor::encode(values, PrecisionFormat::Fp32)
                .expect("benchmark values are finite");
            t.decode()
        }
        EncodingScheme::SpatialTruncated(k) => {
            let t = BitPlaneTensor::encode(values, PrecisionFormat::Fp32)
                .expect("benchmark values are finite");
            truncate_planes(&t, k).decode()
        }
        EncodingScheme::Rate(steps) => values
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let stream = trial_seed ^ (i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
                rate_decode(&rate_encode(v, steps, stream))
            })
            .collect(),
        EncodingScheme::Ttfs(steps) => values
            .iter()
            .map(|&v| {
                ttfs_decode(&ttfs_encode(v, steps)).expect("ttfs trains are well-formed")
            })
            .collect(),
    }
}

/// CSV for encoding reports: `scheme,steps,n,mse_mean,mse_std,seed`.
pub fn encoding_csv(reports: &[MseReport]) -> String {
    let mut out = String::from("scheme,steps,n,mse_mean,mse_std,seed\n");
    for r in reports {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            r.scheme.name(),
            r.scheme.steps(),
            r.n,
            r.mse_mean,
            r.mse_std,
            r.seed
        )
        .expect("string write cannot fail");
    }
    out
}
