//! Clock-driven simulation of a converted network.
//!
//! At every timestep the encoder emits input spikes, then each layer in turn
//! receives its bias current plus the weights of the spikes its predecessor
//! emitted in the same step, integrates, and fires. The output layer
//! integrates without firing and its accumulated potential is the readout.

use rayon::prelude::*;

use crate::dataset::DatasetBundle;
use crate::encoder::InputEncoder;
use crate::error::{Error, Result};
use crate::neuron::{NeuronLayerState, Potential};
use crate::snn::{LayerParams, NumericMode, SnnModel};
use crate::synapse::{connectivity, SynapseTable};
use crate::tensor::Tensor;

/// Optional, memory-hungry parts of a trace.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RecordFlags {
    /// Indices of the neurons that fired, per layer and timestep.
    pub rasters: bool,
    /// Membrane potentials and cumulative inputs of every neuron after
    /// every timestep.
    pub potential_history: bool,
}

/// Exact integer state of a fixed-point layer.
#[derive(Debug, Clone, PartialEq)]
pub struct FixedState {
    pub potentials: Vec<i64>,
    pub cumulative_input: Vec<i64>,
    pub threshold: i64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerTrace {
    pub name: String,
    pub spiking: bool,
    pub threshold: f64,
    /// Residual-elimination share of the per-step bias current.
    pub tre_current: f64,
    pub spike_counts: Vec<u32>,
    /// Potentials after the last timestep.
    pub potentials: Vec<f64>,
    pub cumulative_input: Vec<f64>,
    /// Present for fixed-point layers.
    pub fixed: Option<FixedState>,
    pub raster: Option<Vec<Vec<u32>>>,
    pub potential_history: Option<Vec<Vec<f64>>>,
    pub input_history: Option<Vec<Vec<f64>>>,
}

impl LayerTrace {
    pub fn neurons(&self) -> usize {
        self.spike_counts.len()
    }

    pub fn total_spikes(&self) -> u64 {
        self.spike_counts.iter().map(|&n| n as u64).sum()
    }
}

/// Result of one simulation. `layers[0]` is the input encoder, `layers[n]`
/// is SNN layer `n` (the last one being the output layer).
#[derive(Debug, Clone, PartialEq)]
pub struct SimTrace {
    pub timesteps: u32,
    pub layers: Vec<LayerTrace>,
    /// Output-layer potential after every timestep.
    pub output_potential_per_step: Vec<Vec<f64>>,
    /// Spikes emitted by all layers, input included, per timestep.
    pub spikes_per_step: Vec<u64>,
    /// Synapses traversed by those spikes per timestep.
    pub synops_per_step: Vec<u64>,
}

struct CompiledLayer<P> {
    name: String,
    table: SynapseTable<P>,
    bias: Vec<P>,
    threshold: P,
    tre_current: f64,
    spiking: bool,
}

enum Engine {
    Float(Vec<CompiledLayer<f64>>),
    Fixed(Vec<CompiledLayer<i64>>),
}

/// A converted model with its synapse tables built, ready to run any number
/// of inputs. Runs share the tables and own their state.
pub struct Simulator {
    input_shape: Vec<usize>,
    kappa0: f32,
    engine: Engine,
}

fn per_neuron_bias<P: Copy>(bias: &[P], neurons: usize, layer: &str) -> Result<Vec<P>> {
    if bias.is_empty() || !neurons.is_multiple_of(bias.len()) {
        return Err(Error::shape(
            layer,
            format!("{} bias values for {neurons} neurons", bias.len()),
        ));
    }
    let per = neurons / bias.len();
    Ok(bias.iter().flat_map(|&b| std::iter::repeat_n(b, per)).collect())
}

impl Simulator {
    pub fn new(snn: &SnnModel) -> Result<Self> {
        snn.validate()?;
        let mut float = Vec::new();
        let mut fixed = Vec::new();
        for layer in &snn.layers {
            let conn = connectivity(&layer.op, &layer.input_shape, &layer.output_shape)?;
            let neurons = layer.neurons();
            match &layer.params {
                LayerParams::Float {
                    weight,
                    bias,
                    threshold,
                    tre_current,
                } => {
                    let w: Vec<f64> = weight.data().iter().map(|&v| v as f64).collect();
                    let b: Vec<f64> = bias.data().iter().map(|&v| v as f64).collect();
                    float.push(CompiledLayer {
                        name: layer.name.clone(),
                        table: SynapseTable::new(&conn, &w)?,
                        bias: per_neuron_bias(&b, neurons, &layer.name)?,
                        threshold: *threshold as f64,
                        tre_current: *tre_current as f64,
                        spiking: layer.spiking,
                    });
                }
                LayerParams::Fixed {
                    weight,
                    bias,
                    threshold,
                    tre_current,
                } => {
                    let w: Vec<i64> = weight.data().iter().map(|&v| v as i64).collect();
                    fixed.push(CompiledLayer {
                        name: layer.name.clone(),
                        table: SynapseTable::new(&conn, &w)?,
                        bias: per_neuron_bias(bias.data(), neurons, &layer.name)?,
                        threshold: *threshold,
                        tre_current: *tre_current as f64,
                        spiking: layer.spiking,
                    });
                }
            }
        }
        let engine = match snn.numeric_mode {
            NumericMode::Float => Engine::Float(float),
            NumericMode::Fixed { .. } => Engine::Fixed(fixed),
        };
        Ok(Simulator {
            input_shape: snn.input_shape.clone(),
            kappa0: snn.encoder.kappa0,
            engine,
        })
    }

    pub fn run(&self, input: &Tensor, timesteps: u32, record: RecordFlags) -> Result<SimTrace> {
        if timesteps == 0 {
            return Err(Error::InvalidParameter("timesteps must be positive".into()));
        }
        if input.shape() != self.input_shape.as_slice() {
            return Err(Error::shape(
                "input",
                format!("expected {:?}, got {:?}", self.input_shape, input.shape()),
            ));
        }
        let encoder = InputEncoder::new(input, self.kappa0)?;
        Ok(match &self.engine {
            Engine::Float(layers) => run_layers(layers, encoder, timesteps, record, |_: &NeuronLayerState<f64>| None),
            Engine::Fixed(layers) => run_layers(layers, encoder, timesteps, record, |s: &NeuronLayerState<i64>| {
                Some(FixedState {
                    potentials: s.potential.clone(),
                    cumulative_input: s.cumulative_input.clone(),
                    threshold: s.threshold,
                })
            }),
        })
    }

    /// Runs every sample of `data` in parallel and maps each trace through
    /// `f`; results come back in sample order.
    pub fn map_batch<R: Send>(
        &self,
        data: &DatasetBundle,
        timesteps: u32,
        record: RecordFlags,
        f: impl Fn(usize, SimTrace) -> R + Sync,
    ) -> Result<Vec<R>> {
        (0..data.len())
            .into_par_iter()
            .map(|i| self.run(&data.sample(i), timesteps, record).map(|trace| f(i, trace)))
            .collect()
    }

    pub fn run_batch(&self, data: &DatasetBundle, timesteps: u32, record: RecordFlags) -> Result<Vec<SimTrace>> {
        self.map_batch(data, timesteps, record, |_, trace| trace)
    }
}

fn run_layers<P: Potential>(
    layers: &[CompiledLayer<P>],
    mut encoder: InputEncoder,
    timesteps: u32,
    record: RecordFlags,
    exact: impl Fn(&NeuronLayerState<P>) -> Option<FixedState>,
) -> SimTrace {
    let steps = timesteps as usize;
    let mut states: Vec<NeuronLayerState<P>> = layers
        .iter()
        .map(|l| NeuronLayerState::new(l.bias.len(), l.threshold, l.spiking))
        .collect();
    let mut currents: Vec<Vec<P>> = layers.iter().map(|l| l.bias.clone()).collect();
    let mut rasters: Vec<Option<Vec<Vec<u32>>>> = (0..=layers.len())
        .map(|_| record.rasters.then(|| Vec::with_capacity(steps)))
        .collect();
    let mut potential_history: Vec<Option<Vec<Vec<f64>>>> = (0..=layers.len())
        .map(|_| record.potential_history.then(|| Vec::with_capacity(steps)))
        .collect();
    let mut input_history = potential_history.clone();

    let mut output_potential_per_step = Vec::with_capacity(steps);
    let mut spikes_per_step = Vec::with_capacity(steps);
    let mut synops_per_step = Vec::with_capacity(steps);
    let mut fired = Vec::new();
    let mut next = Vec::new();

    for step in 1..=steps {
        fired.clear();
        encoder.step(&mut fired);
        if let Some(r) = &mut rasters[0] {
            r.push(fired.clone());
        }
        if let Some(h) = &mut potential_history[0] {
            h.push(encoder.potential().to_vec());
        }
        if let Some(h) = &mut input_history[0] {
            h.push(encoder.current().iter().map(|z| z * step as f64).collect());
        }
        let mut spikes = fired.len() as u64;
        let mut synops = 0u64;
        for (n, layer) in layers.iter().enumerate() {
            let current = &mut currents[n];
            current.copy_from_slice(&layer.bias);
            for &src in &fired {
                let src = src as usize;
                synops += layer.table.fan_out(src) as u64;
                for (dst, w) in layer.table.row(src) {
                    current[dst] += w;
                }
            }
            next.clear();
            states[n].integrate(current, &mut next);
            spikes += next.len() as u64;
            if let Some(r) = &mut rasters[n + 1] {
                r.push(next.clone());
            }
            if let Some(h) = &mut potential_history[n + 1] {
                h.push(states[n].potential.iter().map(|v| v.to_f64()).collect());
            }
            if let Some(h) = &mut input_history[n + 1] {
                h.push(states[n].cumulative_input.iter().map(|v| v.to_f64()).collect());
            }
            std::mem::swap(&mut fired, &mut next);
        }
        let out = states.last().expect("validated non-empty");
        output_potential_per_step.push(out.potential.iter().map(|v| v.to_f64()).collect());
        spikes_per_step.push(spikes);
        synops_per_step.push(synops);
    }

    let mut rasters = rasters.into_iter();
    let mut potential_history = potential_history.into_iter();
    let mut input_history = input_history.into_iter();
    let mut traces = vec![LayerTrace {
        name: "input".into(),
        spiking: true,
        threshold: encoder.threshold(),
        tre_current: 0.0,
        spike_counts: encoder.spike_count().to_vec(),
        potentials: encoder.potential().to_vec(),
        cumulative_input: encoder.current().iter().map(|z| z * steps as f64).collect(),
        fixed: None,
        raster: rasters.next().flatten(),
        potential_history: potential_history.next().flatten(),
        input_history: input_history.next().flatten(),
    }];
    for (layer, state) in layers.iter().zip(&states) {
        traces.push(LayerTrace {
            name: layer.name.clone(),
            spiking: layer.spiking,
            threshold: layer.threshold.to_f64(),
            tre_current: layer.tre_current,
            spike_counts: state.spike_count.clone(),
            potentials: state.potential.iter().map(|v| v.to_f64()).collect(),
            cumulative_input: state.cumulative_input.iter().map(|v| v.to_f64()).collect(),
            fixed: exact(state),
            raster: rasters.next().flatten(),
            potential_history: potential_history.next().flatten(),
            input_history: input_history.next().flatten(),
        });
    }
    SimTrace {
        timesteps,
        layers: traces,
        output_potential_per_step,
        spikes_per_step,
        synops_per_step,
    }
}

pub fn simulate(snn: &SnnModel, input: &Tensor, timesteps: u32, record: RecordFlags) -> Result<SimTrace> {
    Simulator::new(snn)?.run(input, timesteps, record)
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Label read out from the output layer's accumulated potential.
pub fn classify(trace: &SimTrace) -> usize {
    let out = trace.layers.last().expect("trace has an output layer");
    match &out.fixed {
        Some(fixed) => {
            let mut best = 0;
            for (i, &v) in fixed.potentials.iter().enumerate() {
                if v > fixed.potentials[best] {
                    best = i;
                }
            }
            best
        }
        None => argmax(&out.potentials),
    }
}

fn check_index(trace: &SimTrace, layer: usize, neuron: usize, t: u32) -> Result<&LayerTrace> {
    let l = trace
        .layers
        .get(layer)
        .ok_or_else(|| Error::Trace(format!("layer {layer} outside 0..{}", trace.layers.len())))?;
    if neuron >= l.neurons() {
        return Err(Error::Trace(format!(
            "neuron {neuron} outside layer {layer} of {} neurons",
            l.neurons()
        )));
    }
    if t == 0 || t > trace.timesteps {
        return Err(Error::Trace(format!("timestep {t} outside 1..={}", trace.timesteps)));
    }
    Ok(l)
}

/// `N_i(t) / t`. Needs rasters for `t` before the end of the run.
pub fn spiking_rate(trace: &SimTrace, layer: usize, neuron: usize, t: u32) -> Result<f64> {
    let l = check_index(trace, layer, neuron, t)?;
    let count = if t == trace.timesteps {
        l.spike_counts[neuron] as usize
    } else {
        let raster = l
            .raster
            .as_ref()
            .ok_or_else(|| Error::Trace(format!("rate at t = {t} < T needs recorded rasters")))?;
        raster[..t as usize]
            .iter()
            .filter(|step| step.binary_search(&(neuron as u32)).is_ok())
            .count()
    };
    Ok(count as f64 / t as f64)
}

/// Residual spiking rate `(V_i(t) - t * c_tre) / (t * V_thr)`: the charge
/// still held by the neuron in rate units. The residual-elimination current
/// `c_tre` is discounted so that the value measures the neuron's error
/// against its own drive; without residual elimination it is `V / (t V_thr)`.
/// Needs a potential history for `t` before the end of the run.
pub fn residual_delta(trace: &SimTrace, layer: usize, neuron: usize, t: u32) -> Result<f64> {
    let l = check_index(trace, layer, neuron, t)?;
    let v = if t == trace.timesteps {
        l.potentials[neuron]
    } else {
        let history = l
            .potential_history
            .as_ref()
            .ok_or_else(|| Error::Trace(format!("residual at t = {t} < T needs a potential history")))?;
        history[t as usize - 1][neuron]
    };
    let t = t as f64;
    Ok((v - t * l.tre_current) / (t * l.threshold))
}
