//! Deterministic constant-current input encoding.
//!
//! Each pixel drives an IF neuron with threshold `kappa0` by the constant
//! current `kappa0 * x / max(x)`, so the brightest pixel fires at every step
//! and a pixel of value `x` fires about `T * x / max(x)` times.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct InputEncoder {
    current: Vec<f64>,
    potential: Vec<f64>,
    spike_count: Vec<u32>,
    threshold: f64,
}

impl InputEncoder {
    /// `input` must lie in `[0, 1]`. An all-zero input never spikes.
    pub fn new(input: &Tensor, kappa0: f32) -> Result<Self> {
        if !(kappa0 > 0.0 && kappa0.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "encoder threshold {kappa0} must be positive"
            )));
        }
        if let Some((index, &value)) = input.data().iter().enumerate().find(|(_, v)| !(0.0..=1.0).contains(*v)) {
            return Err(Error::OutOfRange { index, value });
        }
        let max = input.max() as f64;
        let kappa0 = kappa0 as f64;
        let current = if max > 0.0 {
            input.data().iter().map(|&x| kappa0 * (x as f64 / max)).collect()
        } else {
            vec![0.0; input.len()]
        };
        Ok(InputEncoder {
            potential: vec![0.0; input.len()],
            spike_count: vec![0; input.len()],
            current,
            threshold: kappa0,
        })
    }

    pub fn len(&self) -> usize {
        self.current.len()
    }

    pub fn is_empty(&self) -> bool {
        self.current.is_empty()
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn current(&self) -> &[f64] {
        &self.current
    }

    pub fn potential(&self) -> &[f64] {
        &self.potential
    }

    pub fn spike_count(&self) -> &[u32] {
        &self.spike_count
    }

    /// Advances one timestep, appending the indices of spiking pixels.
    pub fn step(&mut self, fired: &mut Vec<u32>) {
        for (i, (v, &z)) in self.potential.iter_mut().zip(&self.current).enumerate() {
            *v += z;
            if *v >= self.threshold {
                *v -= self.threshold;
                self.spike_count[i] += 1;
                fired.push(i as u32);
            }
        }
    }
}

/// Spike train of shape `[T, ...input.shape]` with entries in `{0, 1}`.
pub fn encode_input(input: &Tensor, kappa0: f32, timesteps: u32) -> Result<Tensor<u8>> {
    if timesteps == 0 {
        return Err(Error::InvalidParameter("timesteps must be positive".into()));
    }
    let mut encoder = InputEncoder::new(input, kappa0)?;
    let n = encoder.len();
    let mut data = vec![0u8; n * timesteps as usize];
    let mut fired = Vec::new();
    for row in data.chunks_exact_mut(n) {
        fired.clear();
        encoder.step(&mut fired);
        for &i in &fired {
            row[i as usize] = 1;
        }
    }
    let mut shape = vec![timesteps as usize];
    shape.extend_from_slice(input.shape());
    Tensor::new(shape, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn train(x: &[f32], t: u32) -> Vec<u8> {
        encode_input(&Tensor::new(vec![x.len()], x.to_vec()).unwrap(), 100.0, t)
            .unwrap()
            .into_data()
    }

    #[test]
    fn single_max_pixel_fires_every_step() {
        assert_eq!(train(&[1.0], 4), vec![1, 1, 1, 1]);
    }

    #[test]
    fn half_intensity_fires_every_other_step() {
        let spikes = train(&[0.5, 1.0], 4);
        let pixel0: Vec<u8> = spikes.chunks(2).map(|r| r[0]).collect();
        let pixel1: Vec<u8> = spikes.chunks(2).map(|r| r[1]).collect();
        assert_eq!(pixel0, vec![0, 1, 0, 1]);
        assert_eq!(pixel1, vec![1, 1, 1, 1]);
    }

    #[test]
    fn dim_image_is_normalised_by_its_maximum() {
        assert_eq!(train(&[0.2], 3), vec![1, 1, 1]);
    }

    #[test]
    fn zero_image_never_spikes() {
        assert!(train(&[0.0, 0.0], 5).iter().all(|&s| s == 0));
    }

    #[test]
    fn rejects_out_of_range_and_zero_steps() {
        let bad = Tensor::new(vec![2], vec![0.5, 1.5]).unwrap();
        assert!(matches!(
            encode_input(&bad, 100.0, 4),
            Err(Error::OutOfRange { index: 1, .. })
        ));
        let ok = Tensor::new(vec![1], vec![1.0]).unwrap();
        assert!(encode_input(&ok, 100.0, 0).is_err());
    }
}
