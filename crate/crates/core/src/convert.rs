//! CNN-to-SNN mapping: current normalisation (and its WN / TB special
//! cases), residual elimination, and fixed-point quantization.

use crate::calibrate::CalibrationStats;
use crate::config::{ConversionConfig, Mode};
use crate::error::{Error, Result};
use crate::fold::has_batchnorm;
use crate::forward::{stages, Stage, StageOp};
use crate::model::CnnModel;
use crate::snn::{EncoderParams, LayerParams, NumericMode, Provenance, SnnLayer, SnnModel};
use crate::synapse::connectivity;
use crate::tensor::Tensor;

/// Raw (un-normalised) weight and per-channel bias of a stage. Average
/// pooling becomes a single shared weight `1 / window^2` with zero bias.
fn stage_parameters(model: &CnnModel, stage: &Stage) -> (Tensor, Vec<f32>) {
    match stage.op {
        StageOp::AvgPool { window, .. } => {
            let w = Tensor::new(vec![1], vec![(1.0 / (window * window) as f64) as f32]).expect("scalar");
            (w, vec![0.0; stage.output_shape[0]])
        }
        StageOp::Conv2D { out_channels, .. } | StageOp::Dense { units: out_channels } => {
            let weight = model.param(stage.layer, "weight").expect("validated").clone();
            let bias = model
                .param(stage.layer, "bias")
                .map_or_else(|| vec![0.0; out_channels], |b| b.data().to_vec());
            (weight, bias)
        }
    }
}

/// Stage outputs feeding a spiking layer must be non-negative.
fn check_topology(stage_list: &[Stage]) -> Result<()> {
    let last = stage_list.len().saturating_sub(1);
    let mut input_non_negative = true;
    for (n, stage) in stage_list.iter().enumerate() {
        let non_negative = match stage.op {
            StageOp::AvgPool { .. } => input_non_negative || stage.relu,
            _ => stage.relu,
        };
        if n < last && !non_negative {
            return Err(Error::Unsupported(format!(
                "stage \"{}\" can produce negative activations but is not the output layer",
                stage.name
            )));
        }
        input_non_negative = non_negative;
    }
    Ok(())
}

/// Maps a BN-folded CNN onto an SNN according to `cfg.mode`.
///
/// With `k = kappa_n`, `lp = lambda_{n-1}`, `l = lambda_n`:
///
/// | mode | weight        | bias per step | threshold |
/// |------|---------------|---------------|-----------|
/// | ECC  | `k*lp/l * W`  | `k*b/l`       | `k`       |
/// | WN   | `lp/l * W`    | `b/l`         | `1`       |
/// | TB   | `W`           | `b/lp`        | `l/lp`    |
///
/// Residual elimination and quantization are separate steps
/// ([`apply_tre`], [`quantize`]).
pub fn convert(model: &CnnModel, stats: &CalibrationStats, cfg: &ConversionConfig) -> Result<SnnModel> {
    if has_batchnorm(model) {
        return Err(Error::InvalidParameter("conversion needs a BN-folded model".into()));
    }
    let stage_list = stages(model)?;
    if stage_list.is_empty() {
        return Err(Error::Unsupported("model has no synaptic layers".into()));
    }
    cfg.validate(stage_list.len())?;
    if stats.lambdas.len() != stage_list.len() + 1 || stats.layers.iter().ne(stage_list.iter().map(|s| &s.name)) {
        return Err(Error::InvalidParameter(format!(
            "calibration stats cover layers {:?}, model has {:?}",
            stats.layers,
            stage_list.iter().map(|s| &s.name).collect::<Vec<_>>()
        )));
    }
    if let Some((n, l)) = stats.lambdas.iter().enumerate().find(|(_, l)| !(**l > 0.0)) {
        return Err(Error::InvalidParameter(format!("lambda[{n}] = {l} is not positive")));
    }
    check_topology(&stage_list)?;

    let last = stage_list.len() - 1;
    let mut layers = Vec::with_capacity(stage_list.len());
    for (n, stage) in stage_list.iter().enumerate() {
        let prev = stats.lambdas[n] as f64;
        let cur = stats.lambdas[n + 1] as f64;
        let kappa = cfg.kappa_for(n) as f64;
        let (weight_scale, bias_scale, threshold) = match cfg.mode {
            Mode::Ecc => (kappa * prev / cur, kappa / cur, kappa),
            Mode::Wn => (prev / cur, 1.0 / cur, 1.0),
            Mode::Tb => (1.0, 1.0 / prev, cur / prev),
        };
        let (weight, bias) = stage_parameters(model, stage);
        let weight = weight.map(|&w| (w as f64 * weight_scale) as f32);
        let bias: Vec<f32> = bias.iter().map(|&b| (b as f64 * bias_scale) as f32).collect();
        let channels = bias.len();
        layers.push(SnnLayer {
            name: stage.name.clone(),
            op: stage.op.clone(),
            input_shape: stage.input_shape.clone(),
            output_shape: stage.output_shape.clone(),
            spiking: n < last,
            params: LayerParams::Float {
                weight,
                bias: Tensor::new(vec![channels], bias)?,
                threshold: threshold as f32,
                tre_current: 0.0,
            },
        });
    }

    let snn = SnnModel {
        name: model.name.clone(),
        input_shape: model.input_shape().to_vec(),
        layers,
        encoder: EncoderParams {
            kappa0: cfg.kappa0,
            timesteps: cfg.timesteps,
        },
        numeric_mode: NumericMode::Float,
        provenance: Provenance {
            config: cfg.clone(),
            stats: stats.clone(),
            tre_eta: 0.0,
        },
    };
    snn.validate()?;
    Ok(snn)
}

/// Adds `eta * V_thr / T` to every neuron's per-timestep bias current.
pub fn apply_tre(snn: &SnnModel, eta: f32, timesteps: u32) -> Result<SnnModel> {
    if !(0.0..1.0).contains(&eta) {
        return Err(Error::InvalidParameter(format!("eta {eta} outside [0, 1)")));
    }
    if timesteps == 0 {
        return Err(Error::InvalidParameter("timesteps must be positive".into()));
    }
    let mut out = snn.clone();
    for layer in &mut out.layers {
        match &mut layer.params {
            LayerParams::Float {
                bias,
                threshold,
                tre_current,
                ..
            } => {
                let extra = (eta as f64 * *threshold as f64 / timesteps as f64) as f32;
                for b in bias.data_mut() {
                    *b += extra;
                }
                *tre_current += extra;
            }
            LayerParams::Fixed { .. } => {
                return Err(Error::InvalidParameter(
                    "residual elimination must be applied before quantization".into(),
                ))
            }
        }
    }
    out.provenance.tre_eta += eta;
    Ok(out)
}

fn round_even(v: f64) -> f64 {
    v.round_ties_even()
}

/// Fixed-point conversion with `bits` fractional bits per layer.
///
/// Each layer is scaled by `2^bits / max|W|`: weights land in
/// `[-2^bits, 2^bits]` and threshold and bias currents are scaled by the same
/// factor, all rounded to nearest (ties to even).
pub fn quantize(snn: &SnnModel, bits: u32) -> Result<SnnModel> {
    if snn.numeric_mode != NumericMode::Float {
        return Err(Error::InvalidParameter(format!(
            "model is already in {:?} mode; quantize expects a float model",
            snn.numeric_mode
        )));
    }
    if !(2..=30).contains(&bits) {
        return Err(Error::InvalidParameter(format!("bit width {bits} outside [2, 30]")));
    }
    let levels = (1u64 << bits) as f64;
    let mut out = snn.clone();
    for layer in &mut out.layers {
        let LayerParams::Float {
            weight,
            bias,
            threshold,
            tre_current,
        } = &layer.params
        else {
            unreachable!("mode checked above")
        };
        let s = weight.max_abs() as f64;
        if !(s > 0.0) {
            return Err(Error::Degenerate {
                layer: layer.name.clone(),
                detail: "all weights are zero".into(),
            });
        }
        let scale = |v: f64| round_even(v / s * levels);
        let q_weight = weight.map(|&w| scale(w as f64) as i32);
        let q_bias = bias.map(|&b| scale(b as f64) as i64);
        let q_threshold = scale(*threshold as f64) as i64;
        if q_threshold < 1 {
            return Err(Error::Degenerate {
                layer: layer.name.clone(),
                detail: format!("threshold rounds to {q_threshold} at {bits} bits"),
            });
        }
        layer.params = LayerParams::Fixed {
            weight: q_weight,
            bias: q_bias,
            threshold: q_threshold,
            tre_current: scale(*tre_current as f64) as i64,
        };
    }
    out.numeric_mode = NumericMode::Fixed { bits };
    out.provenance.config.quant_bits = Some(bits);
    out.validate()?;
    Ok(out)
}

/// Conversion followed by the residual elimination and quantization the
/// configuration asks for. `model` must already be BN-folded.
pub fn build_snn(model: &CnnModel, stats: &CalibrationStats, cfg: &ConversionConfig) -> Result<SnnModel> {
    let mut snn = convert(model, stats, cfg)?;
    if cfg.eta > 0.0 {
        snn = apply_tre(&snn, cfg.eta, cfg.timesteps)?;
    }
    if let Some(bits) = cfg.quant_bits {
        snn = quantize(&snn, bits)?;
    }
    Ok(snn)
}

/// Rate-idealised drive of every layer: the steady per-step current of each
/// neuron divided by its threshold, when every layer spikes at exactly its
/// ideal rate (the encoder at `x / max(x)`, hidden layers at their clipped
/// drive). After current normalisation the drive stays at or below 1 on the
/// calibration data.
pub fn ideal_drive(snn: &SnnModel, input: &Tensor) -> Result<Vec<Vec<f64>>> {
    if snn.numeric_mode != NumericMode::Float {
        return Err(Error::InvalidParameter(
            "ideal drive is defined for float models".into(),
        ));
    }
    if input.shape() != snn.input_shape.as_slice() {
        return Err(Error::shape(
            "input",
            format!("expected {:?}, got {:?}", snn.input_shape, input.shape()),
        ));
    }
    let max = input.max() as f64;
    let mut rates: Vec<f64> = input
        .data()
        .iter()
        .map(|&x| if max > 0.0 { x as f64 / max } else { 0.0 })
        .collect();
    let mut drives = Vec::with_capacity(snn.layers.len());
    for layer in &snn.layers {
        let LayerParams::Float {
            weight,
            bias,
            threshold,
            ..
        } = &layer.params
        else {
            unreachable!("mode checked above")
        };
        let conn = connectivity(&layer.op, &layer.input_shape, &layer.output_shape)?;
        let neurons = layer.neurons();
        let per = neurons / bias.len();
        let mut current: Vec<f64> = (0..neurons).map(|j| bias.data()[j / per] as f64).collect();
        for (i, &r) in rates.iter().enumerate() {
            for k in conn.offsets[i] as usize..conn.offsets[i + 1] as usize {
                current[conn.targets[k] as usize] += weight.data()[conn.weight_index[k] as usize] as f64 * r;
            }
        }
        let drive: Vec<f64> = current.iter().map(|c| c / *threshold as f64).collect();
        rates = drive.iter().map(|d| d.max(0.0)).collect();
        drives.push(drive);
    }
    Ok(drives)
}
