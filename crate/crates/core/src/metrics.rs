//! Operation counts, accuracy sweeps and residual statistics.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibrate::CalibrationStats;
use crate::dataset::DatasetBundle;
use crate::error::{Error, Result};
use crate::forward::{cnn_forward, stages, StageOp};
use crate::model::CnnModel;
use crate::simulate::{argmax, classify, residual_delta, RecordFlags, SimTrace, Simulator};
use crate::snn::SnnModel;
use crate::tensor::Tensor;

/// Connection counts of one layer. Layer 0 is the input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerFans {
    pub name: String,
    /// Neurons in the layer (`M^n`).
    pub neurons: usize,
    /// Input connections of an interior neuron; 0 for the input layer.
    pub fan_in: usize,
    /// Exact number of next-layer synapses each neuron drives, border
    /// effects included; all zero for the output layer.
    pub fan_out: Vec<u32>,
}

impl LayerFans {
    pub fn mean_fan_out(&self) -> f64 {
        self.fan_out.iter().map(|&f| f as f64).sum::<f64>() / self.neurons as f64
    }

    /// `(2 f_in + 1) M`; zero for the input layer.
    pub fn macs(&self) -> u64 {
        if self.fan_in == 0 {
            0
        } else {
            (2 * self.fan_in as u64 + 1) * self.neurons as u64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FanCounts {
    pub layers: Vec<LayerFans>,
}

impl FanCounts {
    pub fn macs(&self) -> u64 {
        self.layers.iter().map(LayerFans::macs).sum()
    }
}

/// Number of `(output position, kernel offset)` pairs that read input
/// coordinate `i` along one axis.
fn axis_cover(i: usize, outputs: usize, kernel: usize, stride: usize, padding: usize) -> u32 {
    (0..kernel)
        .filter(|&k| {
            let p = i + padding;
            p >= k && (p - k).is_multiple_of(stride) && (p - k) / stride < outputs
        })
        .count() as u32
}

fn fans_of(input_shape: &[usize], layers: &[(String, StageOp, Vec<usize>, Vec<usize>)]) -> FanCounts {
    let mut out = vec![LayerFans {
        name: "input".into(),
        neurons: input_shape.iter().product(),
        fan_in: 0,
        fan_out: Vec::new(),
    }];
    for (name, op, input, output) in layers {
        let fan_in = match *op {
            StageOp::Conv2D {
                kernel_size: [kh, kw], ..
            } => kh * kw * input[0],
            StageOp::Dense { .. } => input.iter().product(),
            StageOp::AvgPool { window, .. } => window * window,
        };
        let fan_out = match *op {
            StageOp::Dense { units } => vec![units as u32; input.iter().product()],
            StageOp::Conv2D {
                out_channels,
                kernel_size: [kh, kw],
                stride,
                padding,
            } => spatial_fan_out(input, output, [kh, kw], stride, padding, out_channels as u32),
            StageOp::AvgPool { window, stride } => spatial_fan_out(input, output, [window, window], stride, 0, 1),
        };
        out.last_mut().expect("input layer").fan_out = fan_out;
        out.push(LayerFans {
            name: name.clone(),
            neurons: output.iter().product(),
            fan_in,
            fan_out: Vec::new(),
        });
    }
    let last = out.last_mut().expect("input layer");
    last.fan_out = vec![0; last.neurons];
    FanCounts { layers: out }
}

fn spatial_fan_out(
    input: &[usize],
    output: &[usize],
    [kh, kw]: [usize; 2],
    stride: usize,
    padding: usize,
    per_position: u32,
) -> Vec<u32> {
    let (c, h, w) = (input[0], input[1], input[2]);
    let rows: Vec<u32> = (0..h).map(|y| axis_cover(y, output[1], kh, stride, padding)).collect();
    let cols: Vec<u32> = (0..w).map(|x| axis_cover(x, output[2], kw, stride, padding)).collect();
    let plane: Vec<u32> = rows
        .iter()
        .flat_map(|r| cols.iter().map(move |c| r * c * per_position))
        .collect();
    plane.repeat(c)
}

/// Fan-in / fan-out of every stage of a model, from geometry alone.
pub fn fan_counts(model: &CnnModel) -> Result<FanCounts> {
    let layers: Vec<_> = stages(model)?
        .into_iter()
        .map(|s| (s.name, s.op, s.input_shape, s.output_shape))
        .collect();
    Ok(fans_of(model.input_shape(), &layers))
}

/// The same counts taken from a converted model.
pub fn snn_fan_counts(snn: &SnnModel) -> FanCounts {
    let layers: Vec<_> = snn
        .layers
        .iter()
        .map(|l| {
            (
                l.name.clone(),
                l.op.clone(),
                l.input_shape.clone(),
                l.output_shape.clone(),
            )
        })
        .collect();
    fans_of(&snn.input_shape, &layers)
}

/// `sum_n (2 f_in^n + 1) M^n` over the synaptic layers.
pub fn mac_ops(model: &CnnModel) -> Result<u64> {
    Ok(fan_counts(model)?.macs())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynapticOps {
    pub total: u64,
    /// Operations caused by the spikes of each layer (input first).
    pub per_layer: Vec<u64>,
    pub per_step: Vec<u64>,
}

/// Every spike of neuron `i` in layer `n` costs `f_out` of that neuron.
pub fn synaptic_ops(trace: &SimTrace, fans: &FanCounts) -> Result<SynapticOps> {
    if trace.layers.len() != fans.layers.len()
        || trace
            .layers
            .iter()
            .zip(&fans.layers)
            .any(|(t, f)| t.neurons() != f.fan_out.len())
    {
        return Err(Error::Trace("trace and fan counts describe different models".into()));
    }
    let per_layer: Vec<u64> = trace
        .layers
        .iter()
        .zip(&fans.layers)
        .map(|(t, f)| {
            t.spike_counts
                .iter()
                .zip(&f.fan_out)
                .map(|(&n, &fo)| n as u64 * fo as u64)
                .sum()
        })
        .collect();
    let per_step = if trace.layers.iter().all(|l| l.raster.is_some()) {
        (0..trace.timesteps as usize)
            .map(|t| {
                trace
                    .layers
                    .iter()
                    .zip(&fans.layers)
                    .map(|(l, f)| {
                        l.raster.as_ref().expect("checked")[t]
                            .iter()
                            .map(|&i| f.fan_out[i as usize] as u64)
                            .sum::<u64>()
                    })
                    .sum()
            })
            .collect()
    } else {
        trace.synops_per_step.clone()
    };
    Ok(SynapticOps {
        total: per_layer.iter().sum(),
        per_layer,
        per_step,
    })
}

/// Per-image averages over a test set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyReport {
    pub images: usize,
    pub timesteps: u32,
    pub cnn_macs: u64,
    pub layer_macs: Vec<u64>,
    /// Mean synaptic operations per image.
    pub snn_synops: f64,
    pub layer_synops: Vec<f64>,
    pub step_synops: Vec<f64>,
    /// Average spikes per neuron (`s^n`), per image then averaged.
    pub spikes_per_neuron: Vec<f64>,
}

/// `|Delta_i^n(T)|` summary of one layer.
///
/// `mean_abs` and `max_abs` cover the neurons in the rate-coding regime,
/// those whose net drive (residual elimination excluded) is positive. A
/// neuron with negative drive sits in the clipped part of the ReLU: its
/// potential falls without bound and its `Delta` measures that drive, not
/// un-emitted charge. `mean_abs_all` averages over every neuron.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualSummary {
    pub layer: usize,
    pub name: String,
    /// Neurons with positive net drive.
    pub active: f64,
    pub mean_abs: f64,
    pub max_abs: f64,
    pub mean_abs_all: f64,
}

/// Residual summaries for every spiking layer, input included.
pub fn residual_stats(trace: &SimTrace) -> Vec<ResidualSummary> {
    let t = trace.timesteps;
    trace
        .layers
        .iter()
        .enumerate()
        .filter(|(_, l)| l.spiking)
        .map(|(n, l)| {
            let mut active = 0usize;
            let (mut sum, mut max, mut sum_all) = (0.0, 0.0f64, 0.0);
            for i in 0..l.neurons() {
                let delta = residual_delta(trace, n, i, t).expect("indices in range").abs();
                sum_all += delta;
                if l.cumulative_input[i] - t as f64 * l.tre_current > 0.0 {
                    active += 1;
                    sum += delta;
                    max = max.max(delta);
                }
            }
            ResidualSummary {
                layer: n,
                name: l.name.clone(),
                active: active as f64,
                mean_abs: if active > 0 { sum / active as f64 } else { 0.0 },
                max_abs: max,
                mean_abs_all: sum_all / l.neurons() as f64,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub energy: EnergyReport,
    pub predictions: Vec<usize>,
    pub accuracy: f64,
    /// `residual_stats` averaged over images (`max_abs` is the maximum).
    pub residuals: Vec<ResidualSummary>,
}

struct SampleSummary {
    prediction: usize,
    layer_synops: Vec<u64>,
    step_synops: Vec<u64>,
    layer_spikes: Vec<u64>,
    residuals: Vec<ResidualSummary>,
}

/// Simulates every sample of `data` for `timesteps` steps.
pub fn evaluate(snn: &SnnModel, data: &DatasetBundle, timesteps: u32) -> Result<Evaluation> {
    let sim = Simulator::new(snn)?;
    let fans = snn_fan_counts(snn);
    let summaries = sim.map_batch(data, timesteps, RecordFlags::default(), |_, trace| {
        let ops = synaptic_ops(&trace, &fans).expect("fans built from the same model");
        SampleSummary {
            prediction: classify(&trace),
            layer_synops: ops.per_layer,
            step_synops: ops.per_step,
            layer_spikes: trace.layers.iter().map(|l| l.total_spikes()).collect(),
            residuals: residual_stats(&trace),
        }
    })?;
    Ok(aggregate(&fans, data, timesteps, summaries))
}

fn aggregate(fans: &FanCounts, data: &DatasetBundle, timesteps: u32, summaries: Vec<SampleSummary>) -> Evaluation {
    let images = summaries.len() as f64;
    let mean_of = |len: usize, get: &dyn Fn(&SampleSummary, usize) -> f64| -> Vec<f64> {
        (0..len)
            .map(|k| summaries.iter().map(|s| get(s, k)).sum::<f64>() / images)
            .collect()
    };
    let layer_synops = mean_of(fans.layers.len(), &|s, k| s.layer_synops[k] as f64);
    let step_synops = mean_of(timesteps as usize, &|s, k| s.step_synops[k] as f64);
    let spikes_per_neuron = mean_of(fans.layers.len(), &|s, k| {
        s.layer_spikes[k] as f64 / fans.layers[k].neurons as f64
    });
    let residuals = summaries[0]
        .residuals
        .iter()
        .enumerate()
        .map(|(k, r)| ResidualSummary {
            layer: r.layer,
            name: r.name.clone(),
            active: summaries.iter().map(|s| s.residuals[k].active).sum::<f64>() / images,
            mean_abs: summaries.iter().map(|s| s.residuals[k].mean_abs).sum::<f64>() / images,
            max_abs: summaries.iter().map(|s| s.residuals[k].max_abs).fold(0.0, f64::max),
            mean_abs_all: summaries.iter().map(|s| s.residuals[k].mean_abs_all).sum::<f64>() / images,
        })
        .collect();
    let predictions: Vec<usize> = summaries.iter().map(|s| s.prediction).collect();
    let correct = predictions
        .iter()
        .zip(data.labels())
        .filter(|(p, l)| **p == **l as usize)
        .count();
    Evaluation {
        energy: EnergyReport {
            images: summaries.len(),
            timesteps,
            cnn_macs: fans.macs(),
            layer_macs: fans.layers.iter().map(LayerFans::macs).collect(),
            snn_synops: layer_synops.iter().sum(),
            layer_synops,
            step_synops,
            spikes_per_neuron,
        },
        accuracy: correct as f64 / images,
        predictions,
        residuals,
    }
}

pub fn cnn_predictions(model: &CnnModel, data: &DatasetBundle) -> Result<Vec<usize>> {
    (0..data.len())
        .into_par_iter()
        .map(|i| {
            let logits = cnn_forward(model, &data.sample(i))?.logits;
            let values: Vec<f64> = logits.data().iter().map(|&v| v as f64).collect();
            Ok(argmax(&values))
        })
        .collect()
}

pub fn accuracy(predictions: &[usize], labels: &[u32]) -> f64 {
    let correct = predictions
        .iter()
        .zip(labels)
        .filter(|(p, l)| **p == **l as usize)
        .count();
    correct as f64 / labels.len() as f64
}

pub fn cnn_accuracy(model: &CnnModel, data: &DatasetBundle) -> Result<f64> {
    Ok(accuracy(&cnn_predictions(model, data)?, data.labels()))
}

/// One row of an accuracy / energy table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    #[serde(rename = "T")]
    pub timesteps: u32,
    pub cnn_acc: f64,
    pub snn_acc: f64,
    /// `(cnn_acc - snn_acc)` in percentage points.
    pub loss_pp: f64,
    /// Mean synaptic operations per image.
    pub synops: f64,
    pub macs: u64,
}

/// Accuracy and synaptic operations for each `T`. The SNN is rebuilt per
/// `T` by `snn_for`, since residual elimination depends on `T`.
pub fn accuracy_sweep(
    model: &CnnModel,
    data: &DatasetBundle,
    t_list: &[u32],
    mut snn_for: impl FnMut(u32) -> Result<SnnModel>,
) -> Result<Vec<SweepRow>> {
    if t_list.is_empty() {
        return Err(Error::InvalidParameter("empty timestep list".into()));
    }
    let cnn_acc = cnn_accuracy(model, data)?;
    let macs = mac_ops(model)?;
    t_list
        .iter()
        .map(|&t| {
            let eval = evaluate(&snn_for(t)?, data, t)?;
            Ok(SweepRow {
                timesteps: t,
                cnn_acc,
                snn_acc: eval.accuracy,
                loss_pp: (cnn_acc - eval.accuracy) * 100.0,
                synops: eval.energy.snn_synops,
                macs,
            })
        })
        .collect()
}

/// Rate-ideal spike counts `floor(T a / lambda)`, clipped to `[0, T]`, for
/// every neuron of every stage.
pub fn expected_spike_counts(
    model: &CnnModel,
    stats: &CalibrationStats,
    input: &Tensor,
    timesteps: u32,
) -> Result<Vec<Vec<u32>>> {
    let pass = cnn_forward(model, input)?;
    if pass.activations.len() + 1 != stats.lambdas.len() {
        return Err(Error::InvalidParameter(
            "calibration stats do not match the model".into(),
        ));
    }
    Ok(pass
        .activations
        .iter()
        .enumerate()
        .map(|(n, a)| {
            let lambda = stats.lambdas[n + 1] as f64;
            a.data()
                .iter()
                .map(|&v| {
                    (timesteps as f64 * v as f64 / lambda)
                        .floor()
                        .clamp(0.0, timesteps as f64) as u32
                })
                .collect()
        })
        .collect())
}

/// Least-squares line through `(x, y)`: `(slope, intercept, R^2)`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    (slope, my - slope * mx, r2)
}

pub fn write_csv<T: Serialize>(rows: &[T], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut writer = csv::Writer::from_path(path).map_err(|e| Error::Report(format!("{}: {e}", path.display())))?;
    for row in rows {
        writer
            .serialize(row)
            .map_err(|e| Error::Report(format!("{}: {e}", path.display())))?;
    }
    writer.flush().map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize + ?Sized>(value: &T, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Report(e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
