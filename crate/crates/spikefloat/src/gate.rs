//! Logic gates as single integrate-and-fire neurons, and feed-forward
//! netlists that compose them.
//!
//! The five gates all use unit input weights unless noted, soft reset, and
//! `decay = 1`:
//!
//! | gate | neurons | realization                                             |
//! |------|---------|---------------------------------------------------------|
//! | AND  | 1       | threshold 1.5, weights `+1, +1`                         |
//! | OR   | 1       | threshold 0.5, weights `+1, +1`                         |
//! | NOT  | 1       | threshold 1.0, weight `-1`, constant bias `+1.5`        |
//! | XOR  | 5       | `OR(AND(a, NOT b), AND(NOT a, b))`                      |
//! | MUX  | 5       | `OR(AND(s', a), AND(NOT s, b))`, `s'` re-inverting the shared NOT |
//!
//! A [`Builder`] records gates into a DAG of wires; [`Builder::finish`]
//! prunes dead neurons and freezes the result into a [`Netlist`] stored in
//! compressed sparse rows for fast batched evaluation.  Every output bit of
//! every evaluation comes out of the neuron update rule in
//! [`crate::neuron`] — there is no boolean short-circuit path.

use std::fmt::Write as _;
use std::sync::atomic::{AtomicU64, Ordering};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::neuron::fire;

/// Identifier of one wire in a netlist.
///
/// Wire 0 is constant false and wire 1 constant true; circuit inputs follow,
/// then one wire per neuron in topological order.
pub type WireId = u32;

pub const WIRE_FALSE: WireId = 0;
pub const WIRE_TRUE: WireId = 1;

pub const AND_THRESHOLD: f64 = 1.5;
pub const OR_THRESHOLD: f64 = 0.5;
pub const NOT_THRESHOLD: f64 = 1.0;
pub const NOT_BIAS: f64 = 1.5;

/// The primitive gate vocabulary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GateKind {
    And,
    Or,
    Not,
    Xor,
    Mux,
}

impl GateKind {
    pub fn arity(self) -> usize {
        match self {
            GateKind::Not => 1,
            GateKind::And | GateKind::Or | GateKind::Xor => 2,
            GateKind::Mux => 3,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum GateError {
    #[error("gate {kind:?} takes {expected} inputs, got {got}")]
    ArityMismatch {
        kind: GateKind,
        expected: usize,
        got: usize,
    },
    #[error("netlist expects {expected} input rows, got {got}")]
    InputShape { expected: usize, got: usize },
    #[error("input rows disagree on lane count")]
    LaneMismatch,
}

#[derive(Debug, Clone)]
struct ProtoNeuron {
    inputs: Vec<(WireId, f64)>,
    bias: f64,
    threshold: f64,
}

/// Incrementally records a feed-forward circuit of gate neurons.
///
/// Allocate all circuit inputs first, then emit gates; gate methods return
/// the wire carrying the gate's output.  Constant and degenerate operands
/// are folded away at build time (e.g. `and(x, TRUE)` aliases `x` without
/// spending a neuron), so neuron counts reflect only the work the circuit
/// actually has to do.
#[derive(Debug, Default)]
pub struct Builder {
    n_inputs: usize,
    neurons: Vec<ProtoNeuron>,
}

impl Builder {
    pub fn new() -> Self {
        Builder::default()
    }

    /// Allocate one circuit input wire.  All inputs must be allocated before
    /// the first gate.
    pub fn input(&mut self) -> WireId {
        assert!(
            self.neurons.is_empty(),
            "circuit inputs must be allocated before any gate"
        );
        self.n_inputs += 1;
        (1 + self.n_inputs) as WireId
    }

    /// Allocate `n` input wires.
    pub fn inputs(&mut self, n: usize) -> Vec<WireId> {
        (0..n).map(|_| self.input()).collect()
    }

    fn wire_count(&self) -> usize {
        2 + self.n_inputs + self.neurons.len()
    }

    fn neuron_wire(&self, index: usize) -> WireId {
        (2 + self.n_inputs + index) as WireId
    }

    /// Emit one threshold neuron.  Constant inputs fold into the bias;
    /// duplicate wires merge with summed weights; neurons whose output no
    /// longer depends on any wire collapse to a constant, and neurons that
    /// merely pass a single wire through collapse to an alias (or to a
    /// canonical NOT when they invert it).
    fn push(&mut self, inputs: &[(WireId, f64)], bias: f64, threshold: f64) -> WireId {
        let mut folded: Vec<(WireId, f64)> = Vec::with_capacity(inputs.len());
        let mut bias = bias;
        for &(w, weight) in inputs {
            assert!((w as usize) < self.wire_count(), "unknown wire {w}");
            match w {
                WIRE_FALSE => {}
                WIRE_TRUE => bias += weight,
                _ => {
                    if let Some(slot) = folded.iter_mut().find(|(fw, _)| *fw == w) {
                        slot.1 += weight;
                    } else {
                        folded.push((w, weight));
                    }
                }
            }
        }
        folded.retain(|&(_, weight)| weight != 0.0);
        match folded.len() {
            0 => {
                if bias > threshold {
                    WIRE_TRUE
                } else {
                    WIRE_FALSE
                }
            }
            1 => {
                let (w, weight) = folded[0];
                let fires_at_0 = bias > threshold;
                let fires_at_1 = bias + weight > threshold;
                match (fires_at_0, fires_at_1) {
                    (false, false) => WIRE_FALSE,
                    (true, true) => WIRE_TRUE,
                    (false, true) => w,
                    (true, false) => self.emit(ProtoNeuron {
                        inputs: vec![(w, -1.0)],
                        bias: NOT_BIAS,
                        threshold: NOT_THRESHOLD,
                    }),
                }
            }
            _ => self.emit(ProtoNeuron {
                inputs: folded,
                bias,
                threshold,
            }),
        }
    }

    fn emit(&mut self, neuron: ProtoNeuron) -> WireId {
        self.neurons.push(neuron);
        self.neuron_wire(self.neurons.len() - 1)
    }

    /// Raw threshold neuron with caller-chosen weights.  Restricted to the
    /// crate so the public gate vocabulary stays the five gates; the integer
    /// layer uses it for the fused carry neuron `G + (P AND C)`.
    pub(crate) fn threshold_neuron(
        &mut self,
        inputs: &[(WireId, f64)],
        bias: f64,
        threshold: f64,
    ) -> WireId {
        self.push(inputs, bias, threshold)
    }

    pub fn and(&mut self, a: WireId, b: WireId) -> WireId {
        self.push(&[(a, 1.0), (b, 1.0)], 0.0, AND_THRESHOLD)
    }

    pub fn or(&mut self, a: WireId, b: WireId) -> WireId {
        self.push(&[(a, 1.0), (b, 1.0)], 0.0, OR_THRESHOLD)
    }

    pub fn not(&mut self, x: WireId) -> WireId {
        self.push(&[(x, -1.0)], NOT_BIAS, NOT_THRESHOLD)
    }

    /// `XOR(a, b) = OR(AND(a, NOT b), AND(NOT a, b))` — five neurons on
    /// non-degenerate inputs.
    pub fn xor(&mut self, a: WireId, b: WireId) -> WireId {
        if a == b {
            return WIRE_FALSE;
        }
        match (a, b) {
            (WIRE_FALSE, x) | (x, WIRE_FALSE) => x,
            (WIRE_TRUE, x) | (x, WIRE_TRUE) => self.not(x),
            _ => {
                let na = self.not(a);
                let nb = self.not(b);
                let a_only = self.and(a, nb);
                let b_only = self.and(na, b);
                self.or(a_only, b_only)
            }
        }
    }

    /// `MUX(s, a, b) = s ? a : b` — five neurons: the selector's NOT is
    /// shared between the two AND legs, with a second inversion recovering
    /// the true-polarity selector.
    pub fn mux(&mut self, s: WireId, a: WireId, b: WireId) -> WireId {
        if a == b {
            return a;
        }
        match s {
            WIRE_TRUE => return a,
            WIRE_FALSE => return b,
            _ => {}
        }
        // Degenerate data legs reduce to two-gate forms.
        match (a, b) {
            (WIRE_FALSE, _) => {
                let ns = self.not(s);
                self.and(ns, b)
            }
            (_, WIRE_FALSE) => self.and(s, a),
            (WIRE_TRUE, _) => self.or(s, b),
            (_, WIRE_TRUE) => {
                let ns = self.not(s);
                self.or(ns, a)
            }
            _ => {
                let ns = self.not(s);
                let ss = self.not(ns);
                let take_a = self.and(ss, a);
                let take_b = self.and(ns, b);
                self.or(take_a, take_b)
            }
        }
    }

    /// Balanced OR over any number of wires (zero wires yields false).
    pub fn or_tree(&mut self, wires: &[WireId]) -> WireId {
        self.reduce_tree(wires, WIRE_FALSE, Builder::or)
    }

    /// Balanced AND over any number of wires (zero wires yields true).
    pub fn and_tree(&mut self, wires: &[WireId]) -> WireId {
        self.reduce_tree(wires, WIRE_TRUE, Builder::and)
    }

    fn reduce_tree(
        &mut self,
        wires: &[WireId],
        empty: WireId,
        op: fn(&mut Builder, WireId, WireId) -> WireId,
    ) -> WireId {
        match wires.len() {
            0 => empty,
            1 => wires[0],
            _ => {
                let mut level: Vec<WireId> = wires.to_vec();
                while level.len() > 1 {
                    let mut next = Vec::with_capacity(level.len().div_ceil(2));
                    for pair in level.chunks(2) {
                        next.push(if pair.len() == 2 {
                            op(self, pair[0], pair[1])
                        } else {
                            pair[0]
                        });
                    }
                    level = next;
                }
                level[0]
            }
        }
    }

    /// Prune neurons that cannot reach an output, renumber the survivors,
    /// and freeze the circuit.
    pub fn finish(self, outputs: &[WireId]) -> Netlist {
        let n_wires = self.wire_count();
        for &w in outputs {
            assert!((w as usize) < n_wires, "unknown output wire {w}");
        }
        let first_neuron = 2 + self.n_inputs;
        let mut live = vec![false; self.neurons.len()];
        let mut stack: Vec<usize> = outputs
            .iter()
            .filter_map(|&w| (w as usize).checked_sub(first_neuron))
            .collect();
        while let Some(i) = stack.pop() {
            if live[i] {
                continue;
            }
            live[i] = true;
            for &(w, _) in &self.neurons[i].inputs {
                if let Some(j) = (w as usize).checked_sub(first_neuron) {
                    if !live[j] {
                        stack.push(j);
                    }
                }
            }
        }

        let mut remap = vec![WIRE_FALSE; n_wires];
        for w in 0..first_neuron {
            remap[w] = w as WireId;
        }
        let mut in_wire = Vec::new();
        let mut in_weight = Vec::new();
        let mut offset = vec![0u32];
        let mut bias = Vec::new();
        let mut threshold = Vec::new();
        let mut next = first_neuron as WireId;
        for (i, neuron) in self.neurons.iter().enumerate() {
            if !live[i] {
                continue;
            }
            remap[first_neuron + i] = next;
            next += 1;
            for &(w, weight) in &neuron.inputs {
                in_wire.push(remap[w as usize]);
                in_weight.push(weight);
            }
            offset.push(in_wire.len() as u32);
            bias.push(neuron.bias);
            threshold.push(neuron.threshold);
        }
        let outputs = outputs.iter().map(|&w| remap[w as usize]).collect();
        Netlist {
            n_inputs: self.n_inputs,
            outputs,
            in_wire,
            in_weight,
            offset,
            bias,
            threshold,
            spikes: AtomicU64::new(0),
        }
    }
}

/// Per-neuron multiplicative threshold deviations for an evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DeviationMode {
    /// Independent draws from `U(-max, max)` per neuron.
    Uniform { max: f64 },
    /// Every neuron shifted by the same signed deviation (worst case).
    Fixed { delta: f64 },
}

/// Non-ideal evaluation knobs.  The defaults reproduce the ideal circuit.
#[derive(Debug, Clone)]
pub struct EvalConfig {
    /// Membrane decay applied to the (freshly reset) membrane each step.
    /// Combinational netlists reset every neuron before its step, so any
    /// decay multiplies a zero membrane and the outputs are provably
    /// decay-invariant; the knob exists so that invariance is *measured*,
    /// not assumed.
    pub decay: f64,
    /// Gaussian current-noise sigma applied at every neuron.
    pub noise_sigma: f64,
    /// Seed for the noise stream (one ChaCha stream per evaluation, drawn in
    /// neuron-major, lane-minor order).
    pub noise_seed: u64,
    /// Per-neuron effective thresholds overriding the built-in ones, as
    /// produced by [`Netlist::perturbed_thresholds`].
    pub thresholds: Option<Vec<f64>>,
}

impl EvalConfig {
    pub fn ideal() -> Self {
        EvalConfig {
            decay: 1.0,
            noise_sigma: 0.0,
            noise_seed: 0,
            thresholds: None,
        }
    }
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig::ideal()
    }
}

/// A frozen feed-forward circuit in compressed sparse row form.
#[derive(Debug)]
pub struct Netlist {
    n_inputs: usize,
    outputs: Vec<WireId>,
    in_wire: Vec<WireId>,
    in_weight: Vec<f64>,
    offset: Vec<u32>,
    bias: Vec<f64>,
    threshold: Vec<f64>,
    spikes: AtomicU64,
}

impl Netlist {
    pub fn n_inputs(&self) -> usize {
        self.n_inputs
    }

    pub fn n_outputs(&self) -> usize {
        self.outputs.len()
    }

    pub fn n_neurons(&self) -> usize {
        self.bias.len()
    }

    pub fn output_wires(&self) -> &[WireId] {
        &self.outputs
    }

    /// Spikes fired across all evaluations since the last
    /// [`clear_spike_count`](Netlist::clear_spike_count).
    pub fn spike_count(&self) -> u64 {
        self.spikes.load(Ordering::Relaxed)
    }

    pub fn clear_spike_count(&self) {
        self.spikes.store(0, Ordering::Relaxed);
    }

    /// Longest gate chain from any input to any neuron.
    pub fn layer_count(&self) -> usize {
        let first_neuron = 2 + self.n_inputs;
        let mut depth = vec![0usize; first_neuron + self.n_neurons()];
        let mut deepest = 0;
        for n in 0..self.n_neurons() {
            let mut d = 0;
            for e in self.offset[n] as usize..self.offset[n + 1] as usize {
                d = d.max(depth[self.in_wire[e] as usize]);
            }
            depth[first_neuron + n] = d + 1;
            deepest = deepest.max(d + 1);
        }
        deepest
    }

    /// One line per neuron: `neuron <wire> θ=<t> bias=<b> in=[<wire>:<w>,...]`.
    pub fn dump(&self) -> String {
        let first_neuron = 2 + self.n_inputs;
        let mut out = String::new();
        for n in 0..self.n_neurons() {
            let _ = write!(
                out,
                "neuron {} θ={} bias={} in=[",
                first_neuron + n,
                self.threshold[n],
                self.bias[n]
            );
            for (k, e) in (self.offset[n] as usize..self.offset[n + 1] as usize).enumerate() {
                if k > 0 {
                    out.push(',');
                }
                let _ = write!(out, "{}:{}", self.in_wire[e], self.in_weight[e]);
            }
            out.push_str("]\n");
        }
        out
    }

    /// Effective per-neuron thresholds under a deviation model, for use in
    /// [`EvalConfig::thresholds`].
    pub fn perturbed_thresholds(&self, mode: DeviationMode, seed: u64) -> Vec<f64> {
        use rand::Rng;
        match mode {
            DeviationMode::Fixed { delta } => {
                self.threshold.iter().map(|t| t * (1.0 + delta)).collect()
            }
            DeviationMode::Uniform { max } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                self.threshold
                    .iter()
                    .map(|t| {
                        let delta: f64 = rng.gen_range(-max..=max);
                        t * (1.0 + delta)
                    })
                    .collect()
            }
        }
    }

    /// Evaluate under ideal conditions.
    pub fn eval(&self, inputs: &BitMatrix) -> Result<BitMatrix, GateError> {
        self.eval_with(inputs, &EvalConfig::ideal())
    }

    /// Evaluate all lanes under the given conditions.
    ///
    /// Each neuron is reset (zero membrane) before its step, integrates its
    /// weighted inputs plus bias, and the shared fire rule decides the spike
    /// — identically to stepping a [`crate::neuron::NeuronState`] per gate.
    pub fn eval_with(&self, inputs: &BitMatrix, cfg: &EvalConfig) -> Result<BitMatrix, GateError> {
        if inputs.rows() != self.n_inputs {
            return Err(GateError::InputShape {
                expected: self.n_inputs,
                got: inputs.rows(),
            });
        }
        if let Some(t) = &cfg.thresholds {
            assert_eq!(t.len(), self.n_neurons(), "threshold override length");
        }
        let lanes = inputs.lanes();
        let mut result = BitMatrix::zeros(self.outputs.len(), lanes);
        if lanes == 0 {
            return Ok(result);
        }

        // Blocked evaluation keeps the working set in cache for big nets;
        // noisy evaluation uses one block so the noise stream order is
        // well-defined regardless of netlist size.
        let n_wires = 2 + self.n_inputs + self.n_neurons();
        let block = if cfg.noise_sigma > 0.0 {
            lanes
        } else {
            (4_000_000 / n_wires.max(1)).clamp(16, 1024).min(lanes)
        };
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.noise_seed);
        let mut noise_row: Vec<f64> = Vec::new();
        let mut buf = vec![0u8; n_wires * block];
        let mut fired: u64 = 0;

        let mut lane0 = 0;
        while lane0 < lanes {
            let cur = block.min(lanes - lane0);
            buf[block..2 * block].fill(1);
            for r in 0..self.n_inputs {
                let dst = (2 + r) * block;
                let src = inputs.row(r);
                buf[dst..dst + cur].copy_from_slice(&src[lane0..lane0 + cur]);
            }
            for n in 0..self.n_neurons() {
                let start = self.offset[n] as usize;
                let end = self.offset[n + 1] as usize;
                let bias = self.bias[n];
                let theta = match &cfg.thresholds {
                    Some(t) => t[n],
                    None => self.threshold[n],
                };
                let out_start = (2 + self.n_inputs + n) * block;
                let (head, tail) = buf.split_at_mut(out_start);
                let out = &mut tail[..cur];
                if cfg.noise_sigma > 0.0 {
                    noise_row.clear();
                    noise_row.extend((0..cur).map(|_| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        cfg.noise_sigma * z
                    }));
                }
                let fan_in = end - start;
                match fan_in {
                    1 => {
                        let w0 = self.in_weight[start];
                        let r0 = row(head, self.in_wire[start], block, cur);
                        for l in 0..cur {
                            let drive = bias + w0 * r0[l] as f64;
                            out[l] = self.settle(drive, &noise_row, l, cfg, theta);
                        }
                    }
                    2 => {
                        let w0 = self.in_weight[start];
                        let w1 = self.in_weight[start + 1];
                        let r0 = row(head, self.in_wire[start], block, cur);
                        let r1 = row(head, self.in_wire[start + 1], block, cur);
                        for l in 0..cur {
                            let drive = bias + w0 * r0[l] as f64 + w1 * r1[l] as f64;
                            out[l] = self.settle(drive, &noise_row, l, cfg, theta);
                        }
                    }
                    3 => {
                        let w0 = self.in_weight[start];
                        let w1 = self.in_weight[start + 1];
                        let w2 = self.in_weight[start + 2];
                        let r0 = row(head, self.in_wire[start], block, cur);
                        let r1 = row(head, self.in_wire[start + 1], block, cur);
                        let r2 = row(head, self.in_wire[start + 2], block, cur);
                        for l in 0..cur {
                            let drive = bias
                                + w0 * r0[l] as f64
                                + w1 * r1[l] as f64
                                + w2 * r2[l] as f64;
                            out[l] = self.settle(drive, &noise_row, l, cfg, theta);
                        }
                    }
                    _ => {
                        for l in 0..cur {
                            let mut drive = bias;
                            for e in start..end {
                                drive += self.in_weight[e]
                                    * row(head, self.in_wire[e], block, cur)[l] as f64;
                            }
                            out[l] = self.settle(drive, &noise_row, l, cfg, theta);
                        }
                    }
                }
                fired += out.iter().map(|&s| s as u64).sum::<u64>();
            }
            for (r, &w) in self.outputs.iter().enumerate() {
                let src = (w as usize) * block;
                let dst = result.row_mut(r);
                dst[lane0..lane0 + cur].copy_from_slice(&buf[src..src + cur]);
            }
            lane0 += cur;
        }
        self.spikes.fetch_add(fired, Ordering::Relaxed);
        Ok(result)
    }

    #[inline(always)]
    fn settle(&self, drive: f64, noise: &[f64], lane: usize, cfg: &EvalConfig, theta: f64) -> u8 {
        // Freshly reset membrane: the decay term multiplies zero, which is
        // exactly why combinational outputs cannot depend on it.
        let mut potential = cfg.decay * 0.0 + drive;
        if cfg.noise_sigma > 0.0 {
            potential += noise[lane];
        }
        let (spike, _membrane) = fire(potential, theta, true);
        spike as u8
    }
}

#[inline(always)]
fn row(head: &[u8], wire: WireId, block: usize, cur: usize) -> &[u8] {
    let start = wire as usize * block;
    &head[start..start + cur]
}

/// Dense bit matrix: `rows` spike planes by `lanes` parallel instances, one
/// byte per bit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BitMatrix {
    rows: usize,
    lanes: usize,
    data: Vec<u8>,
}

impl BitMatrix {
    pub fn zeros(rows: usize, lanes: usize) -> Self {
        BitMatrix {
            rows,
            lanes,
            data: vec![0; rows * lanes],
        }
    }

    /// Rows of equal length; every value must be 0 or 1.
    pub fn from_rows(rows: Vec<Vec<u8>>) -> Result<Self, GateError> {
        let lanes = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != lanes) {
            return Err(GateError::LaneMismatch);
        }
        let n_rows = rows.len();
        let mut data = Vec::with_capacity(n_rows * lanes);
        for r in rows {
            debug_assert!(r.iter().all(|&b| b <= 1));
            data.extend_from_slice(&r);
        }
        Ok(BitMatrix {
            rows: n_rows,
            lanes,
            data,
        })
    }

    /// One lane per value, `width` rows, row `i` holding bit `i` (LSB first).
    pub fn from_words(width: usize, values: &[u64]) -> Self {
        let mut m = BitMatrix::zeros(width, values.len());
        for (lane, &v) in values.iter().enumerate() {
            for i in 0..width {
                m.data[i * values.len() + lane] = ((v >> i) & 1) as u8;
            }
        }
        m
    }

    /// Inverse of [`from_words`](BitMatrix::from_words) (rows beyond 64 are
    /// rejected by the width assert).
    pub fn to_words(&self) -> Vec<u64> {
        assert!(self.rows <= 64, "word too wide for u64");
        (0..self.lanes)
            .map(|lane| {
                (0..self.rows).fold(0u64, |acc, i| {
                    acc | (self.data[i * self.lanes + lane] as u64) << i
                })
            })
            .collect()
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn lanes(&self) -> usize {
        self.lanes
    }

    pub fn get(&self, row: usize, lane: usize) -> u8 {
        self.data[row * self.lanes + lane]
    }

    pub fn set(&mut self, row: usize, lane: usize, bit: u8) {
        debug_assert!(bit <= 1);
        self.data[row * self.lanes + lane] = bit;
    }

    pub fn row(&self, r: usize) -> &[u8] {
        &self.data[r * self.lanes..(r + 1) * self.lanes]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [u8] {
        &mut self.data[r * self.lanes..(r + 1) * self.lanes]
    }

    /// Stack two matrices with equal lane counts.
    pub fn vstack(&self, other: &BitMatrix) -> Result<BitMatrix, GateError> {
        if self.lanes != other.lanes {
            return Err(GateError::LaneMismatch);
        }
        let mut data = Vec::with_capacity(self.data.len() + other.data.len());
        data.extend_from_slice(&self.data);
        data.extend_from_slice(&other.data);
        Ok(BitMatrix {
            rows: self.rows + other.rows,
            lanes: self.lanes,
            data,
        })
    }
}

/// Standalone netlist for one primitive gate.
pub fn gate_netlist(kind: GateKind) -> Netlist {
    let mut b = Builder::new();
    let ins = b.inputs(kind.arity());
    let out = match kind {
        GateKind::And => b.and(ins[0], ins[1]),
        GateKind::Or => b.or(ins[0], ins[1]),
        GateKind::Not => b.not(ins[0]),
        GateKind::Xor => b.xor(ins[0], ins[1]),
        GateKind::Mux => b.mux(ins[0], ins[1], ins[2]),
    };
    b.finish(&[out])
}

/// Evaluate one gate on scalar spike inputs.
pub fn eval_gate(kind: GateKind, inputs: &[u8]) -> Result<u8, GateError> {
    if inputs.len() != kind.arity() {
        return Err(GateError::ArityMismatch {
            kind,
            expected: kind.arity(),
            got: inputs.len(),
        });
    }
    let m = BitMatrix::from_rows(inputs.iter().map(|&b| vec![b]).collect())?;
    let out = gate_netlist(kind).eval(&m)?;
    Ok(out.get(0, 0))
}

/// Evaluate one gate across many lanes; `inputs` holds one row per operand.
pub fn eval_gate_vec(kind: GateKind, inputs: &BitMatrix) -> Result<BitMatrix, GateError> {
    if inputs.rows() != kind.arity() {
        return Err(GateError::ArityMismatch {
            kind,
            expected: kind.arity(),
            got: inputs.rows(),
        });
    }
    gate_netlist(kind).eval(inputs)
}
