use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How layer-wise normalisation is distributed between weights and thresholds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Current normalisation: weights scaled by `kappa * lambda_prev / lambda`,
    /// threshold `kappa`.
    Ecc,
    /// Weight normalisation: unit thresholds, weights scaled by `lambda_prev / lambda`.
    Wn,
    /// Threshold balancing: weights untouched, threshold `lambda / lambda_prev`.
    Tb,
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ecc" => Ok(Mode::Ecc),
            "wn" => Ok(Mode::Wn),
            "tb" => Ok(Mode::Tb),
            other => Err(Error::InvalidParameter(format!("unknown mode \"{other}\""))),
        }
    }
}

pub const DEFAULT_KAPPA: f32 = 100.0;
pub const DEFAULT_ETA: f32 = 0.5;
pub const DEFAULT_EPSILON: f32 = 0.001;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConversionConfig {
    pub mode: Mode,
    /// Current amplification factor per layer; a single entry applies to all layers.
    pub kappa: Vec<f32>,
    /// Threshold of the input encoder.
    pub kappa0: f32,
    pub eta: f32,
    pub epsilon: f32,
    pub timesteps: u32,
    pub quant_bits: Option<u32>,
}

impl Default for ConversionConfig {
    fn default() -> Self {
        ConversionConfig {
            mode: Mode::Ecc,
            kappa: vec![DEFAULT_KAPPA],
            kappa0: DEFAULT_KAPPA,
            eta: DEFAULT_ETA,
            epsilon: DEFAULT_EPSILON,
            timesteps: 256,
            quant_bits: None,
        }
    }
}

impl ConversionConfig {
    /// Kappa of stage `n` (0-based over the synaptic layers).
    pub fn kappa_for(&self, n: usize) -> f32 {
        match self.kappa.as_slice() {
            [single] => *single,
            many => many[n],
        }
    }

    pub fn validate(&self, layers: usize) -> Result<()> {
        if !(0.0..1.0).contains(&self.eta) {
            return Err(Error::InvalidParameter(format!("eta {} outside [0, 1)", self.eta)));
        }
        if self.eta > 0.0 && self.mode != Mode::Ecc {
            return Err(Error::InvalidParameter(format!(
                "eta {} given for mode {:?}; residual elimination is only defined for ECC",
                self.eta, self.mode
            )));
        }
        if self.kappa.is_empty() || (self.kappa.len() != 1 && self.kappa.len() != layers) {
            return Err(Error::InvalidParameter(format!(
                "kappa needs 1 or {layers} entries, got {}",
                self.kappa.len()
            )));
        }
        if let Some(k) = self
            .kappa
            .iter()
            .chain([&self.kappa0])
            .find(|k| !(**k >= 1.0 && k.is_finite()))
        {
            return Err(Error::InvalidParameter(format!("kappa {k} must be >= 1")));
        }
        if !(self.epsilon >= 0.0) {
            return Err(Error::InvalidParameter(format!("epsilon {} is negative", self.epsilon)));
        }
        if self.timesteps == 0 {
            return Err(Error::InvalidParameter("timesteps must be positive".into()));
        }
        if let Some(b) = self.quant_bits {
            if !(2..=30).contains(&b) {
                return Err(Error::InvalidParameter(format!("bit width {b} outside [2, 30]")));
            }
        }
        Ok(())
    }
}
