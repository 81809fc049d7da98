//! Folding inference-mode batch normalisation into the preceding
//! Conv2D / Dense layer, with an explicit stability constant.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::forward::stages;
use crate::model::{CnnModel, LayerKind};
use crate::tensor::Tensor;

/// Returns an equivalent model without BatchNorm layers.
///
/// For every output channel `c`, with `s = gamma_c / sqrt(var_c + epsilon)`:
/// `W_c <- s * W_c` and `b_c <- s * (b_c - mean_c) + beta_c`. `epsilon` is the
/// value used in the fold, independently of what the manifest records.
pub fn fold_batchnorm(model: &CnnModel, epsilon: f32) -> Result<CnnModel> {
    if !(epsilon >= 0.0) {
        return Err(Error::InvalidParameter(format!("epsilon {epsilon} is negative")));
    }
    let stage_list = stages(model)?;
    let mut params: BTreeMap<String, Tensor> = BTreeMap::new();
    let mut folded_layers = model.layers().to_vec();

    for stage in &stage_list {
        let Some(bn) = stage.batchnorm else { continue };
        let layer = &model.layers()[stage.layer];
        let get = |role: &str| model.param(bn, role).expect("validated");
        let (gamma, beta, mean, var) = (get("gamma"), get("beta"), get("mean"), get("variance"));
        let weight = model.param(stage.layer, "weight").expect("validated");
        let channels = gamma.len();
        let per_channel = weight.len() / channels;

        let scale: Vec<f64> = (0..channels)
            .map(|c| gamma.data()[c] as f64 / (var.data()[c] as f64 + epsilon as f64).sqrt())
            .collect();
        let mut w = weight.clone();
        for (c, chunk) in w.data_mut().chunks_exact_mut(per_channel).enumerate() {
            for v in chunk {
                *v = (scale[c] * *v as f64) as f32;
            }
        }
        let bias = model.param(stage.layer, "bias");
        let b: Vec<f32> = (0..channels)
            .map(|c| {
                let b = bias.map_or(0.0, |b| b.data()[c] as f64);
                (scale[c] * (b - mean.data()[c] as f64) + beta.data()[c] as f64) as f32
            })
            .collect();

        let weight_name = layer.params["weight"].clone();
        let bias_name = layer
            .params
            .get("bias")
            .cloned()
            .unwrap_or_else(|| format!("{}.bias", layer.name));
        params.insert(weight_name, w);
        params.insert(bias_name.clone(), Tensor::new(vec![channels], b)?);
        folded_layers[stage.layer].params.insert("bias".into(), bias_name);
    }

    let keep: Vec<bool> = model
        .layers()
        .iter()
        .map(|l| !matches!(l.kind, LayerKind::BatchNorm { .. }))
        .collect();
    let layers: Vec<_> = folded_layers
        .into_iter()
        .zip(&keep)
        .filter_map(|(l, k)| k.then_some(l))
        .collect();
    for layer in &layers {
        for name in layer.params.values() {
            if !params.contains_key(name) {
                params.insert(name.clone(), model.params()[name].clone());
            }
        }
    }
    CnnModel::new(
        model.name.clone(),
        model.input_shape().to_vec(),
        layers,
        params,
        model.metadata.clone(),
    )
}

pub fn has_batchnorm(model: &CnnModel) -> bool {
    model
        .layers()
        .iter()
        .any(|l| matches!(l.kind, LayerKind::BatchNorm { .. }))
}
