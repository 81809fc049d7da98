//! Conversion of trained convolutional networks into integrate-and-fire
//! spiking networks, and a clock-driven simulator to run them.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod calibrate;
pub mod config;
pub mod container;
pub mod convert;
pub mod dataset;
pub mod encoder;
pub mod error;
pub mod fold;
pub mod forward;
pub mod metrics;
pub mod model;
pub mod neuron;
pub mod simulate;
pub mod snn;
pub mod synapse;
pub mod tensor;

pub use calibrate::{calibrate, CalibrationStats};
pub use config::{ConversionConfig, Mode};
pub use convert::{apply_tre, build_snn, convert, quantize};
pub use dataset::{load_dataset, save_dataset, DatasetBundle, Split};
pub use encoder::encode_input;
pub use error::{Error, Result};
pub use fold::fold_batchnorm;
pub use forward::{cnn_forward, ForwardPass};
pub use metrics::{
    accuracy_sweep, evaluate, fan_counts, mac_ops, residual_stats, synaptic_ops, EnergyReport, Evaluation, FanCounts,
    SweepRow,
};
pub use model::{load_model, save_model, CnnModel, LayerKind, LayerSpec};
pub use simulate::{classify, residual_delta, simulate, spiking_rate, RecordFlags, SimTrace, Simulator};
pub use snn::{load_snn_model, save_snn_model, LayerParams, NumericMode, SnnLayer, SnnModel};
pub use tensor::Tensor;
