//! The integrate-and-fire neuron.
//!
//! Everything else in this crate is a wiring diagram over this one update
//! rule.  A neuron integrates its weighted input current into a membrane
//! potential, optionally leaks (`decay < 1`), and emits a spike when the
//! potential strictly exceeds its effective threshold:
//!
//! ```text
//! V' = decay * V + I + noise        noise ~ N(0, sigma^2), one draw per step
//! spike = V' > theta_eff            theta_eff = threshold * (1 + deviation)
//! ```
//!
//! On a spike the membrane either has the threshold subtracted (`soft_reset`,
//! the default for logic gates) or is cleared to zero.  The comparison is
//! strict, so a NaN potential never fires: NaN simply parks in the membrane
//! and the neuron stays silent, which is what lets NaN propagate through the
//! arithmetic circuits without any special casing.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

/// Static parameters of one neuron.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NeuronConfig {
    /// Nominal firing threshold; must be positive.
    pub threshold: f64,
    /// Membrane decay factor per step, in `(0, 1]`; `1.0` means no leak.
    pub decay: f64,
    /// Subtract the threshold on fire instead of clearing the membrane.
    pub soft_reset: bool,
    /// Standard deviation of the Gaussian noise added to the summed input
    /// current, once per step.  Zero disables the draw entirely.
    pub noise_sigma: f64,
    /// Multiplicative threshold mismatch: the neuron actually fires at
    /// `threshold * (1 + threshold_deviation)`.  Fixed for the lifetime of
    /// the neuron, as fabrication mismatch would be.
    pub threshold_deviation: f64,
}

impl NeuronConfig {
    /// A noiseless soft-reset gate neuron with the given threshold.
    pub fn gate(threshold: f64) -> Self {
        NeuronConfig {
            threshold,
            decay: 1.0,
            soft_reset: true,
            noise_sigma: 0.0,
            threshold_deviation: 0.0,
        }
    }

    /// Threshold actually applied at the spike comparison.
    pub fn effective_threshold(&self) -> f64 {
        self.threshold * (1.0 + self.threshold_deviation)
    }

    pub fn validate(&self) -> Result<(), NeuronError> {
        if !(self.threshold > 0.0) {
            return Err(NeuronError::BadThreshold(self.threshold));
        }
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return Err(NeuronError::BadDecay(self.decay));
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(NeuronError::BadNoiseSigma(self.noise_sigma));
        }
        Ok(())
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum NeuronError {
    #[error("threshold must be positive, got {0}")]
    BadThreshold(f64),
    #[error("decay must lie in (0, 1], got {0}")]
    BadDecay(f64),
    #[error("noise sigma must be non-negative, got {0}")]
    BadNoiseSigma(f64),
}

/// Mutable state of one neuron: membrane potential plus its private noise
/// stream.
#[derive(Debug, Clone)]
pub struct NeuronState {
    membrane: f64,
    seed: u64,
    rng: ChaCha8Rng,
}

impl NeuronState {
    /// Fresh neuron with zero membrane and a noise stream derived from
    /// `seed`.
    pub fn new(seed: u64) -> Self {
        NeuronState {
            membrane: 0.0,
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn membrane(&self) -> f64 {
        self.membrane
    }

    /// Clear the membrane and rewind the noise stream to its seed, so a
    /// reset neuron replays exactly the same noise sequence.
    pub fn reset(&mut self) {
        self.membrane = 0.0;
        self.rng = ChaCha8Rng::seed_from_u64(self.seed);
    }

    /// Advance one step with the given summed input current; returns whether
    /// the neuron spiked.
    pub fn step(&mut self, config: &NeuronConfig, input_current: f64) -> bool {
        let noise = if config.noise_sigma > 0.0 {
            let z: f64 = StandardNormal.sample(&mut self.rng);
            config.noise_sigma * z
        } else {
            0.0
        };
        let potential = config.decay * self.membrane + input_current + noise;
        let (spike, after) = fire(potential, config.effective_threshold(), config.soft_reset);
        self.membrane = after;
        spike
    }
}

/// The one threshold decision shared by the scalar neuron above and the
/// vectorized netlist evaluator: given the fully integrated potential,
/// produce the spike bit and the post-reset membrane.
///
/// Strict comparison: a potential exactly at threshold does not fire, and a
/// NaN potential compares false, so NaN never spikes.
#[inline(always)]
pub(crate) fn fire(potential: f64, theta_eff: f64, soft_reset: bool) -> (bool, f64) {
    if potential > theta_eff {
        let after = if soft_reset { potential - theta_eff } else { 0.0 };
        (true, after)
    } else {
        (false, potential)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spike_and_soft_reset() {
        // V = 0, theta = 1.5, decay = 1, I = 2.0 -> fires and keeps the 0.5
        // residual.
        let cfg = NeuronConfig::gate(1.5);
        let mut st = NeuronState::new(0);
        assert!(st.step(&cfg, 2.0));
        assert_eq!(st.membrane(), 0.5);
    }

    #[test]
    fn subthreshold_accumulates() {
        let cfg = NeuronConfig::gate(1.5);
        let mut st = NeuronState::new(0);
        assert!(!st.step(&cfg, 1.0));
        assert_eq!(st.membrane(), 1.0);
        // Second step pushes it over: 1.0 + 1.0 = 2.0 > 1.5.
        assert!(st.step(&cfg, 1.0));
        assert_eq!(st.membrane(), 0.5);
    }

    #[test]
    fn exactly_at_threshold_does_not_fire() {
        let cfg = NeuronConfig::gate(1.5);
        let mut st = NeuronState::new(0);
        assert!(!st.step(&cfg, 1.5));
        assert_eq!(st.membrane(), 1.5);
    }

    #[test]
    fn hard_reset_clears_membrane() {
        let cfg = NeuronConfig {
            soft_reset: false,
            ..NeuronConfig::gate(1.0)
        };
        let mut st = NeuronState::new(0);
        assert!(st.step(&cfg, 3.0));
        assert_eq!(st.membrane(), 0.0);
    }

    #[test]
    fn decay_leaks_membrane() {
        let cfg = NeuronConfig {
            decay: 0.5,
            ..NeuronConfig::gate(10.0)
        };
        let mut st = NeuronState::new(0);
        st.step(&cfg, 1.0);
        st.step(&cfg, 1.0);
        // 0.5 * 1.0 + 1.0
        assert_eq!(st.membrane(), 1.5);
    }

    #[test]
    fn nan_input_parks_without_firing() {
        let cfg = NeuronConfig::gate(1.5);
        let mut st = NeuronState::new(0);
        assert!(!st.step(&cfg, f64::NAN));
        assert!(st.membrane().is_nan());
        // Still silent on the next step even with a huge current.
        assert!(!st.step(&cfg, 100.0));
        assert!(st.membrane().is_nan());
    }

    #[test]
    fn reset_replays_the_noise_stream() {
        let cfg = NeuronConfig {
            noise_sigma: 0.3,
            ..NeuronConfig::gate(1.5)
        };
        let mut st = NeuronState::new(42);
        let first: Vec<bool> = (0..32).map(|_| st.step(&cfg, 1.4)).collect();
        let m_first = st.membrane();
        st.reset();
        let second: Vec<bool> = (0..32).map(|_| st.step(&cfg, 1.4)).collect();
        assert_eq!(first, second);
        assert_eq!(st.membrane(), m_first);
    }

    #[test]
    fn distinct_seeds_give_distinct_noise() {
        let cfg = NeuronConfig {
            noise_sigma: 0.5,
            ..NeuronConfig::gate(1.5)
        };
        let mut a = NeuronState::new(1);
        let mut b = NeuronState::new(2);
        let sa: Vec<bool> = (0..64).map(|_| a.step(&cfg, 1.3)).collect();
        let sb: Vec<bool> = (0..64).map(|_| b.step(&cfg, 1.3)).collect();
        assert_ne!(sa, sb);
    }

    #[test]
    fn threshold_deviation_is_multiplicative() {
        let cfg = NeuronConfig {
            threshold_deviation: 0.2,
            ..NeuronConfig::gate(1.5)
        };
        assert_eq!(cfg.effective_threshold(), 1.5 * 1.2);
        let mut st = NeuronState::new(0);
        // 1.7 would fire at the nominal 1.5 but not at 1.8.
        assert!(!st.step(&cfg, 1.7));
        assert!(st.step(&cfg, 0.2));
    }

    #[test]
    fn config_validation() {
        assert!(NeuronConfig::gate(1.5).validate().is_ok());
        assert_eq!(
            NeuronConfig::gate(0.0).validate(),
            Err(NeuronError::BadThreshold(0.0))
        );
        let bad_decay = NeuronConfig {
            decay: 0.0,
            ..NeuronConfig::gate(1.0)
        };
        assert_eq!(bad_decay.validate(), Err(NeuronError::BadDecay(0.0)));
        let bad_sigma = NeuronConfig {
            noise_sigma: -1.0,
            ..NeuronConfig::gate(1.0)
        };
        assert_eq!(
            bad_sigma.validate(),
            Err(NeuronError::BadNoiseSigma(-1.0))
        );
    }
}
