//! Integrate-and-fire dynamics with reset by subtraction.

use std::fmt::Debug;
use std::ops::{AddAssign, SubAssign};

/// Membrane-potential arithmetic: `f64` for float models, `i64` for
/// fixed-point models (where every update is exact).
pub trait Potential: Copy + Default + PartialOrd + AddAssign + SubAssign + Debug + Send + Sync + 'static {
    fn to_f64(self) -> f64;
}

impl Potential for f64 {
    fn to_f64(self) -> f64 {
        self
    }
}

impl Potential for i64 {
    fn to_f64(self) -> f64 {
        self as f64
    }
}

/// State of one layer of IF neurons.
#[derive(Debug, Clone, PartialEq)]
pub struct NeuronLayerState<P> {
    pub potential: Vec<P>,
    pub spike_count: Vec<u32>,
    /// Sum of every current the neuron has received.
    pub cumulative_input: Vec<P>,
    pub threshold: P,
    /// A non-spiking layer integrates but never fires or resets.
    pub spiking: bool,
}

impl<P: Potential> NeuronLayerState<P> {
    pub fn new(neurons: usize, threshold: P, spiking: bool) -> Self {
        NeuronLayerState {
            potential: vec![P::default(); neurons],
            spike_count: vec![0; neurons],
            cumulative_input: vec![P::default(); neurons],
            threshold,
            spiking,
        }
    }

    pub fn len(&self) -> usize {
        self.potential.len()
    }

    pub fn is_empty(&self) -> bool {
        self.potential.is_empty()
    }

    /// Integrates one timestep of input current and appends the indices of
    /// the neurons that fired to `fired`.
    pub fn integrate(&mut self, incoming: &[P], fired: &mut Vec<u32>) {
        assert_eq!(incoming.len(), self.len(), "incoming current does not match layer size");
        let threshold = self.threshold;
        for (i, &z) in incoming.iter().enumerate() {
            let v = &mut self.potential[i];
            *v += z;
            self.cumulative_input[i] += z;
            if self.spiking && *v >= threshold {
                *v -= threshold;
                self.spike_count[i] += 1;
                fired.push(i as u32);
            }
        }
    }

    /// One timestep; returns the spike vector.
    pub fn step_layer(&mut self, incoming: &[P]) -> Vec<bool> {
        let mut fired = Vec::new();
        self.integrate(incoming, &mut fired);
        let mut spikes = vec![false; self.len()];
        for i in fired {
            spikes[i as usize] = true;
        }
        spikes
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn threshold_current_fires_and_resets() {
        let mut s = NeuronLayerState::new(1, 100.0, true);
        assert_eq!(s.step_layer(&[100.0]), vec![true]);
        assert_eq!(s.potential, vec![0.0]);
        assert_eq!(s.spike_count, vec![1]);
    }

    #[test]
    fn residual_is_kept() {
        let mut s = NeuronLayerState::new(1, 10i64, true);
        assert_eq!(s.step_layer(&[6]), vec![false]);
        assert_eq!(s.step_layer(&[6]), vec![true]);
        assert_eq!(s.potential, vec![2]);
    }

    #[test]
    fn at_most_one_spike_per_step() {
        let mut s = NeuronLayerState::new(1, 1i64, true);
        s.step_layer(&[5]);
        assert_eq!((s.spike_count[0], s.potential[0]), (1, 4));
    }

    #[test]
    fn negative_potential_is_not_clamped() {
        let mut s = NeuronLayerState::new(1, 1.0, true);
        s.step_layer(&[-3.0]);
        assert_eq!(s.potential, vec![-3.0]);
    }

    #[test]
    fn non_spiking_layer_only_accumulates() {
        let mut s = NeuronLayerState::new(2, 1.0, false);
        s.step_layer(&[5.0, 0.5]);
        s.step_layer(&[5.0, 0.5]);
        assert_eq!(s.potential, vec![10.0, 1.0]);
        assert_eq!(s.spike_count, vec![0, 0]);
    }

    fn naive(currents: &[i64], threshold: i64) -> (i64, u32) {
        let mut v = 0;
        let mut n = 0;
        for &z in currents {
            v += z;
            if v >= threshold {
                v -= threshold;
                n += 1;
            }
        }
        (v, n)
    }

    proptest! {
        #[test]
        fn matches_naive_stepper(currents in prop::collection::vec(-50i64..150, 1..200), threshold in 1i64..200) {
            let mut s = NeuronLayerState::new(1, threshold, true);
            let mut last = 0;
            for &z in &currents {
                s.step_layer(&[z]);
                prop_assert!(s.spike_count[0] >= last);
                last = s.spike_count[0];
                prop_assert_eq!(s.cumulative_input[0], s.spike_count[0] as i64 * threshold + s.potential[0]);
            }
            prop_assert_eq!((s.potential[0], s.spike_count[0]), naive(&currents, threshold));
        }
    }
}
