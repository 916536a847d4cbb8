//! IEEE-754 floating-point arithmetic and transformer layers built entirely
//! from integrate-and-fire neuron logic gates.
//!
//! The crate is layered the way the circuits are:
//!
//! 1. [`neuron`] — the single IF/LIF neuron update rule.
//! 2. [`gate`] — AND/OR/NOT from one neuron each, XOR/MUX from five, and the
//!    feed-forward netlists that compose them (with vectorized evaluation and
//!    spike counting).
//! 3. [`word`] — integer building blocks: adders, shifters, comparators,
//!    leading-zero counters, and an array multiplier.
//! 4. [`fp`] — IEEE-754 add/sub/mul/div/sqrt datapaths for FP8/FP16/FP32,
//!    verified bit-exactly against a host softfloat oracle.
//! 5. [`nonlinear`] / [`nn`] — exp, sigmoid, SiLU, softmax, sin/cos and the
//!    layers built on them (linear, RMSNorm, RoPE, attention, transformer
//!    block).
//!
//! Measurement and experiment machinery lives in [`encoding`] (bit-plane,
//! rate, and time-to-first-spike codings), [`fidelity`] (ULP/MSE reports),
//! [`robustness`] (decay/noise/threshold scans), and [`energy`] (spike-count
//! energy accounting).

pub mod encoding;
pub mod energy;
pub mod fidelity;
pub mod fp;
pub mod gate;
pub mod neuron;
pub mod nn;
pub mod nonlinear;
pub mod robustness;
pub mod word;
