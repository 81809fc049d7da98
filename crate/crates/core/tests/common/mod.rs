#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::PathBuf;

use rand::Rng;
use serde::Deserialize;
use spikeconv::calibrate::CalibrationStats;
use spikeconv::forward::StageOp;
use spikeconv::model::Metadata;
use spikeconv::snn::{EncoderParams, Provenance};
use spikeconv::*;

pub fn fixture_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/digits")
}

#[derive(Debug, Deserialize)]
pub struct Golden {
    pub probe_indices: Vec<usize>,
    pub logits: Vec<Vec<f32>>,
    pub bn1_preactivation_probe0: Vec<f32>,
    pub cnn_test_accuracy: f64,
    pub layer_count: usize,
    pub param_sha256: BTreeMap<String, String>,
}

pub struct Fixture {
    pub model: CnnModel,
    pub folded: CnnModel,
    pub stats: CalibrationStats,
    pub calib: DatasetBundle,
    pub test: DatasetBundle,
}

pub fn golden() -> Golden {
    let text = std::fs::read_to_string(fixture_dir().join("golden.json")).unwrap();
    serde_json::from_str(&text).unwrap()
}

pub fn fixture() -> Fixture {
    let dir = fixture_dir();
    let model = load_model(dir.join("model")).unwrap();
    let calib = load_dataset(dir.join("calib")).unwrap();
    let test = load_dataset(dir.join("test")).unwrap();
    let folded = fold_batchnorm(&model, config::DEFAULT_EPSILON).unwrap();
    let stats = calibrate(&folded, &calib, config::DEFAULT_EPSILON).unwrap();
    Fixture {
        model,
        folded,
        stats,
        calib,
        test,
    }
}

impl Fixture {
    pub fn snn(&self, cfg: &ConversionConfig) -> SnnModel {
        build_snn(&self.folded, &self.stats, cfg).unwrap()
    }
}

fn placeholder_provenance() -> Provenance {
    Provenance {
        config: ConversionConfig::default(),
        stats: CalibrationStats {
            lambdas: vec![1.0],
            layers: vec![],
            sample_count: 0,
            fold_epsilon: 0.0,
        },
        tre_eta: 0.0,
    }
}

fn uniform(rng: &mut impl Rng, n: usize, scale: f32) -> Vec<f32> {
    (0..n).map(|_| rng.gen_range(-scale..scale)).collect()
}

/// A small random float SNN: up to three conv / pool layers on a tiny image,
/// then a spiking dense layer and a non-spiking dense output.
pub fn random_snn(rng: &mut impl Rng) -> SnnModel {
    let c = rng.gen_range(1..=2);
    let hw = rng.gen_range(3..=6);
    let input_shape = vec![c, hw, hw];
    let mut shape = input_shape.clone();
    let mut layers = Vec::new();
    let mut spatial = rng.gen_range(0..=2);
    while spatial > 0 {
        spatial -= 1;
        let (ch, h) = (shape[0], shape[1]);
        let op = if h % 2 == 0 && rng.gen_bool(0.3) {
            StageOp::AvgPool { window: 2, stride: 2 }
        } else {
            let k = rng.gen_range(1..=3.min(h));
            StageOp::Conv2D {
                out_channels: rng.gen_range(1..=3),
                kernel_size: [k, k],
                stride: rng.gen_range(1..=2),
                padding: rng.gen_range(0..=1),
            }
        };
        let (out, weights, channels) = match op {
            StageOp::AvgPool { window, .. } => (vec![ch, h / window, h / window], 1, ch),
            StageOp::Conv2D {
                out_channels,
                kernel_size: [k, _],
                stride,
                padding,
                ..
            } => {
                let o = (h + 2 * padding - k) / stride + 1;
                (vec![out_channels, o, o], out_channels * ch * k * k, out_channels)
            }
            StageOp::Dense { .. } => unreachable!(),
        };
        layers.push(float_layer(
            rng,
            format!("l{}", layers.len()),
            op,
            shape.clone(),
            out.clone(),
            weights,
            channels,
            true,
        ));
        shape = out;
    }
    let flat: usize = shape.iter().product();
    let hidden = rng.gen_range(1..=6);
    layers.push(float_layer(
        rng,
        format!("l{}", layers.len()),
        StageOp::Dense { units: hidden },
        vec![flat],
        vec![hidden],
        hidden * flat,
        hidden,
        true,
    ));
    let classes = rng.gen_range(1..=4);
    layers.push(float_layer(
        rng,
        format!("l{}", layers.len()),
        StageOp::Dense { units: classes },
        vec![hidden],
        vec![classes],
        classes * hidden,
        classes,
        false,
    ));
    let snn = SnnModel {
        name: "random".into(),
        input_shape,
        layers,
        encoder: EncoderParams {
            kappa0: rng.gen_range(1.0..200.0),
            timesteps: 16,
        },
        numeric_mode: NumericMode::Float,
        provenance: placeholder_provenance(),
    };
    snn.validate().unwrap();
    snn
}

#[allow(clippy::too_many_arguments)]
fn float_layer(
    rng: &mut impl Rng,
    name: String,
    op: StageOp,
    input_shape: Vec<usize>,
    output_shape: Vec<usize>,
    weights: usize,
    channels: usize,
    spiking: bool,
) -> SnnLayer {
    let threshold = rng.gen_range(0.5f32..100.0);
    let weight_shape = match op {
        StageOp::AvgPool { .. } => vec![1],
        _ => vec![weights],
    };
    SnnLayer {
        name,
        op,
        input_shape,
        output_shape,
        spiking,
        params: LayerParams::Float {
            weight: Tensor::new(weight_shape, uniform(rng, weights, threshold)).unwrap(),
            bias: Tensor::new(vec![channels], uniform(rng, channels, threshold * 0.2)).unwrap(),
            threshold,
            tre_current: 0.0,
        },
    }
}

pub fn random_input(rng: &mut impl Rng, shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            if rng.gen_bool(0.2) {
                0.0
            } else {
                rng.gen_range(0.0f32..=1.0)
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// A random CNN mixing convolution, batch norm, pooling and dense layers.
/// Running mean and variance are taken from the pre-normalisation
/// activations of a batch of random inputs, as they would be after training.
pub fn random_bn_model(rng: &mut impl Rng, epsilon: f32) -> CnnModel {
    use spikeconv::tensor::{avgpool_forward, batchnorm_forward, conv2d_forward, dense_forward, relu};

    let c_in = rng.gen_range(1..=3);
    let mut batch: Vec<Tensor> = (0..64).map(|_| random_input(rng, &[c_in, 4, 4])).collect();
    let mut params = BTreeMap::new();
    let mut layers = vec![LayerSpec::new("input", LayerKind::Input)];

    let add_bn = |params: &mut BTreeMap<String, Tensor>,
                  layers: &mut Vec<LayerSpec>,
                  batch: &mut Vec<Tensor>,
                  rng: &mut dyn rand::RngCore,
                  name: &str| {
        let ch = batch[0].shape()[0];
        let per = batch[0].len() / ch;
        let (mut mean, mut var) = (vec![0.0f64; ch], vec![0.0f64; ch]);
        let count = (batch.len() * per) as f64;
        for x in batch.iter() {
            for (k, v) in x.data().iter().enumerate() {
                mean[k / per] += *v as f64 / count;
            }
        }
        for x in batch.iter() {
            for (k, v) in x.data().iter().enumerate() {
                var[k / per] += (*v as f64 - mean[k / per]).powi(2) / count;
            }
        }
        let mut t = |suffix: &str, data: Vec<f32>| {
            let key = format!("{name}.{suffix}");
            params.insert(key.clone(), Tensor::new(vec![ch], data).unwrap());
            key
        };
        let gamma = t("gamma", (0..ch).map(|_| rng.gen_range(0.2..2.0)).collect());
        let beta = t("beta", (0..ch).map(|_| rng.gen_range(-1.0..1.0)).collect());
        let mean = t("mean", mean.iter().map(|&m| m as f32).collect());
        let var = t("var", var.iter().map(|&v| v as f32).collect());
        for x in batch.iter_mut() {
            *x = batchnorm_forward(
                x,
                &params[&gamma],
                &params[&beta],
                &params[&mean],
                &params[&var],
                epsilon,
            )
            .unwrap();
        }
        layers.push(
            LayerSpec::new(name, LayerKind::BatchNorm { epsilon })
                .with_param("gamma", &gamma)
                .with_param("beta", &beta)
                .with_param("mean", &mean)
                .with_param("variance", &var),
        );
    };

    let mut c = c_in;
    for i in 0..rng.gen_range(1..=2) {
        let out = rng.gen_range(2..=4);
        let name = format!("conv{i}");
        let w = Tensor::new(vec![out, c, 3, 3], uniform(rng, out * c * 9, 0.5)).unwrap();
        let b = rng
            .gen_bool(0.5)
            .then(|| Tensor::new(vec![out], uniform(rng, out, 0.5)).unwrap());
        for x in batch.iter_mut() {
            *x = conv2d_forward(x, &w, b.as_ref(), 1, 1).unwrap();
        }
        params.insert(format!("{name}.w"), w);
        let mut spec = LayerSpec::new(
            &name,
            LayerKind::Conv2D {
                out_channels: out,
                kernel_size: [3, 3],
                stride: 1,
                padding: 1,
            },
        )
        .with_param("weight", format!("{name}.w"));
        if let Some(b) = b {
            params.insert(format!("{name}.b"), b);
            spec = spec.with_param("bias", format!("{name}.b"));
        }
        layers.push(spec);
        add_bn(&mut params, &mut layers, &mut batch, rng, &format!("bn{i}"));
        layers.push(LayerSpec::new(format!("relu{i}"), LayerKind::Relu));
        for x in batch.iter_mut() {
            *x = relu(x);
        }
        c = out;
    }
    layers.push(LayerSpec::new("pool", LayerKind::AvgPool { window: 2, stride: 2 }));
    layers.push(LayerSpec::new("flatten", LayerKind::Flatten));
    let flat = c * 4;
    for x in batch.iter_mut() {
        *x = avgpool_forward(x, 2, 2).unwrap();
        *x = x.clone().reshape(vec![flat]).unwrap();
    }
    let hidden = rng.gen_range(3..=8);
    let w = Tensor::new(vec![hidden, flat], uniform(rng, hidden * flat, 0.5)).unwrap();
    let b = Tensor::new(vec![hidden], uniform(rng, hidden, 0.5)).unwrap();
    for x in batch.iter_mut() {
        *x = dense_forward(x, &w, Some(&b)).unwrap();
    }
    params.insert("fc.w".into(), w);
    params.insert("fc.b".into(), b);
    layers.push(
        LayerSpec::new("fc", LayerKind::Dense { units: hidden })
            .with_param("weight", "fc.w")
            .with_param("bias", "fc.b"),
    );
    add_bn(&mut params, &mut layers, &mut batch, rng, "bn_fc");
    layers.push(LayerSpec::new("relu_fc", LayerKind::Relu));
    params.insert(
        "out.w".into(),
        Tensor::new(vec![3, hidden], uniform(rng, 3 * hidden, 0.5)).unwrap(),
    );
    layers.push(LayerSpec::new("out", LayerKind::Dense { units: 3 }).with_param("weight", "out.w"));
    CnnModel::new("random-bn", vec![c_in, 4, 4], layers, params, Metadata::default()).unwrap()
}

/// One spiking neuron driven only by its bias `current`, feeding a
/// non-spiking readout.
pub fn single_neuron(current: f32, threshold: f32) -> SnnModel {
    let layer = |name: &str, bias: f32, spiking: bool| SnnLayer {
        name: name.into(),
        op: StageOp::Dense { units: 1 },
        input_shape: vec![1],
        output_shape: vec![1],
        spiking,
        params: LayerParams::Float {
            weight: Tensor::new(vec![1, 1], vec![if spiking { 0.0 } else { 1.0 }]).unwrap(),
            bias: Tensor::new(vec![1], vec![bias]).unwrap(),
            threshold,
            tre_current: 0.0,
        },
    };
    SnnModel {
        name: "neuron".into(),
        input_shape: vec![1],
        layers: vec![layer("drive", current, true), layer("out", 0.0, false)],
        encoder: EncoderParams {
            kappa0: 100.0,
            timesteps: 1,
        },
        numeric_mode: NumericMode::Float,
        provenance: Provenance {
            config: ConversionConfig::default(),
            stats: CalibrationStats {
                lambdas: vec![1.0, 1.0, 1.0],
                layers: vec!["drive".into(), "out".into()],
                sample_count: 0,
                fold_epsilon: 0.0,
            },
            tre_eta: 0.0,
        },
    }
}
