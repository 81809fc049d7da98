//! Converted spiking model and its container format.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::calibrate::CalibrationStats;
use crate::config::ConversionConfig;
use crate::container::{self, TensorEntry, FORMAT_VERSION};
use crate::error::{Error, Result};
use crate::forward::StageOp;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum NumericMode {
    Float,
    Fixed { bits: u32 },
}

/// Synaptic weights, per-timestep bias currents and threshold of one layer.
///
/// `bias` holds one current per output channel (conv, pool) or unit (dense),
/// injected at every timestep. `tre_current` is the part of that bias that
/// was added for residual elimination; it is kept so residuals can be
/// reported against the model's own currents.
#[derive(Debug, Clone, PartialEq)]
pub enum LayerParams {
    Float {
        weight: Tensor<f32>,
        bias: Tensor<f32>,
        threshold: f32,
        tre_current: f32,
    },
    Fixed {
        weight: Tensor<i32>,
        bias: Tensor<i64>,
        threshold: i64,
        tre_current: i64,
    },
}

impl LayerParams {
    pub fn threshold(&self) -> f64 {
        match self {
            LayerParams::Float { threshold, .. } => *threshold as f64,
            LayerParams::Fixed { threshold, .. } => *threshold as f64,
        }
    }

    pub fn tre_current(&self) -> f64 {
        match self {
            LayerParams::Float { tre_current, .. } => *tre_current as f64,
            LayerParams::Fixed { tre_current, .. } => *tre_current as f64,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SnnLayer {
    pub name: String,
    pub op: StageOp,
    pub input_shape: Vec<usize>,
    pub output_shape: Vec<usize>,
    /// The output layer integrates without firing.
    pub spiking: bool,
    pub params: LayerParams,
}

impl SnnLayer {
    pub fn neurons(&self) -> usize {
        self.output_shape.iter().product()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EncoderParams {
    pub kappa0: f32,
    pub timesteps: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub config: ConversionConfig,
    pub stats: CalibrationStats,
    /// Residual-elimination strength actually applied (0 when none).
    pub tre_eta: f32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SnnModel {
    pub name: String,
    pub input_shape: Vec<usize>,
    pub layers: Vec<SnnLayer>,
    pub encoder: EncoderParams,
    pub numeric_mode: NumericMode,
    pub provenance: Provenance,
}

impl SnnModel {
    /// Checks the structural invariants: positive thresholds, consistent
    /// parameter representation, weight range in fixed-point mode.
    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Invariant("SNN has no layers".into()));
        }
        let mut shape = self.input_shape.clone();
        for layer in &self.layers {
            let flat_ok = matches!(layer.op, StageOp::Dense { .. })
                && layer.input_shape.len() == 1
                && layer.input_shape[0] == shape.iter().product::<usize>();
            if layer.input_shape != shape && !flat_ok {
                return Err(Error::shape(
                    &layer.name,
                    format!("input {:?} does not chain from {:?}", layer.input_shape, shape),
                ));
            }
            shape = layer.output_shape.clone();
            match (&layer.params, self.numeric_mode) {
                (LayerParams::Float { threshold, .. }, NumericMode::Float) => {
                    if !(*threshold > 0.0) {
                        return Err(Error::Invariant(format!(
                            "layer {} threshold {threshold} is not positive",
                            layer.name
                        )));
                    }
                }
                (LayerParams::Fixed { weight, threshold, .. }, NumericMode::Fixed { bits }) => {
                    if *threshold <= 0 {
                        return Err(Error::Invariant(format!(
                            "layer {} threshold {threshold} is not positive",
                            layer.name
                        )));
                    }
                    let bound = 1i64 << bits;
                    if let Some(w) = weight.data().iter().find(|w| (**w as i64).abs() > bound) {
                        return Err(Error::Invariant(format!(
                            "layer {} weight {w} exceeds 2^{bits}",
                            layer.name
                        )));
                    }
                }
                _ => {
                    return Err(Error::Invariant(format!(
                        "layer {} parameters do not match numeric mode {:?}",
                        layer.name, self.numeric_mode
                    )))
                }
            }
        }
        if self.layers.last().is_some_and(|l| l.spiking)
            || self.layers[..self.layers.len() - 1].iter().any(|l| !l.spiking)
        {
            return Err(Error::Invariant("only the output layer may be non-spiking".into()));
        }
        Ok(())
    }

    pub fn output_len(&self) -> usize {
        self.layers.last().map_or(0, SnnLayer::neurons)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct LayerEntry {
    name: String,
    op: StageOp,
    input_shape: Vec<usize>,
    output_shape: Vec<usize>,
    spiking: bool,
    threshold: f64,
    tre_current: f64,
    weight: String,
    bias: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct SnnManifest {
    format_version: String,
    kind: String,
    name: String,
    input_shape: Vec<usize>,
    numeric_mode: NumericMode,
    encoder: EncoderParams,
    provenance: Provenance,
    layers: Vec<LayerEntry>,
    tensors: Vec<TensorEntry>,
}

pub fn save_snn_model(snn: &SnnModel, path: impl AsRef<Path>) -> Result<()> {
    snn.validate()?;
    let dir = path.as_ref();
    let mut tensors = Vec::new();
    let mut layers = Vec::new();
    for layer in &snn.layers {
        let weight = format!("{}.weight", layer.name);
        let bias = format!("{}.bias", layer.name);
        match &layer.params {
            LayerParams::Float { weight: w, bias: b, .. } => {
                tensors.push(container::write_f32(dir, &weight, w)?);
                tensors.push(container::write_f32(dir, &bias, b)?);
            }
            LayerParams::Fixed { weight: w, bias: b, .. } => {
                tensors.push(container::write_i32(dir, &weight, w)?);
                tensors.push(container::write_i64(dir, &bias, b)?);
            }
        }
        layers.push(LayerEntry {
            name: layer.name.clone(),
            op: layer.op.clone(),
            input_shape: layer.input_shape.clone(),
            output_shape: layer.output_shape.clone(),
            spiking: layer.spiking,
            threshold: layer.params.threshold(),
            tre_current: layer.params.tre_current(),
            weight,
            bias,
        });
    }
    let manifest = SnnManifest {
        format_version: FORMAT_VERSION.to_string(),
        kind: "snn".into(),
        name: snn.name.clone(),
        input_shape: snn.input_shape.clone(),
        numeric_mode: snn.numeric_mode,
        encoder: snn.encoder,
        provenance: snn.provenance.clone(),
        layers,
        tensors,
    };
    container::write_manifest(dir, &manifest)
}

fn exact_i64(value: f64, what: &str) -> Result<i64> {
    if value.fract() != 0.0 || value.abs() > (1u64 << 53) as f64 {
        return Err(Error::Manifest(format!("{what} {value} is not an integer")));
    }
    Ok(value as i64)
}

pub fn load_snn_model(path: impl AsRef<Path>) -> Result<SnnModel> {
    let dir = path.as_ref();
    let manifest: SnnManifest = container::read_manifest(dir)?;
    container::check_version(&manifest.format_version)?;
    if manifest.kind != "snn" {
        return Err(Error::Manifest(format!(
            "expected kind \"snn\", found \"{}\"",
            manifest.kind
        )));
    }
    let mut layers = Vec::with_capacity(manifest.layers.len());
    for entry in manifest.layers {
        let w = container::find_entry(&manifest.tensors, &entry.weight)?;
        let b = container::find_entry(&manifest.tensors, &entry.bias)?;
        let params = match manifest.numeric_mode {
            NumericMode::Float => LayerParams::Float {
                weight: container::read_f32(dir, w)?,
                bias: container::read_f32(dir, b)?,
                threshold: entry.threshold as f32,
                tre_current: entry.tre_current as f32,
            },
            NumericMode::Fixed { .. } => LayerParams::Fixed {
                weight: container::read_i32(dir, w)?,
                bias: container::read_i64(dir, b)?,
                threshold: exact_i64(entry.threshold, "threshold")?,
                tre_current: exact_i64(entry.tre_current, "tre_current")?,
            },
        };
        layers.push(SnnLayer {
            name: entry.name,
            op: entry.op,
            input_shape: entry.input_shape,
            output_shape: entry.output_shape,
            spiking: entry.spiking,
            params,
        });
    }
    let snn = SnnModel {
        name: manifest.name,
        input_shape: manifest.input_shape,
        layers,
        encoder: manifest.encoder,
        numeric_mode: manifest.numeric_mode,
        provenance: manifest.provenance,
    };
    snn.validate()?;
    Ok(snn)
}
