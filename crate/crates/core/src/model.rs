//! CNN model container: layer list, parameter tensors, shape-chain
//! validation, and the manifest (de)serialisation.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::container::{self, TensorEntry, FORMAT_VERSION};
use crate::error::{Error, Result};
use crate::tensor::{conv_output_size, pool_output_shape, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum LayerKind {
    Input,
    Conv2D {
        out_channels: usize,
        kernel_size: [usize; 2],
        stride: usize,
        padding: usize,
    },
    Dense {
        units: usize,
    },
    AvgPool {
        window: usize,
        stride: usize,
    },
    BatchNorm {
        epsilon: f32,
    },
    Relu,
    Flatten,
}

const KIND_NAMES: [&str; 7] = ["Input", "Conv2D", "Dense", "AvgPool", "BatchNorm", "Relu", "Flatten"];

impl LayerKind {
    /// Parameter roles the layer must (or may) reference.
    fn roles(&self) -> (&'static [&'static str], &'static [&'static str]) {
        match self {
            LayerKind::Conv2D { .. } | LayerKind::Dense { .. } => (&["weight"], &["bias"]),
            LayerKind::BatchNorm { .. } => (&["gamma", "beta", "mean", "variance"], &[]),
            _ => (&[], &[]),
        }
    }

    pub fn is_linear(&self) -> bool {
        matches!(
            self,
            LayerKind::Conv2D { .. } | LayerKind::Dense { .. } | LayerKind::AvgPool { .. }
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub name: String,
    #[serde(flatten)]
    pub kind: LayerKind,
    /// Role (`weight`, `bias`, `gamma`, ...) to tensor name.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub params: BTreeMap<String, String>,
}

impl LayerSpec {
    pub fn new(name: impl Into<String>, kind: LayerKind) -> Self {
        LayerSpec {
            name: name.into(),
            kind,
            params: BTreeMap::new(),
        }
    }

    pub fn with_param(mut self, role: &str, tensor: impl Into<String>) -> Self {
        self.params.insert(role.to_string(), tensor.into());
        self
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    #[serde(default)]
    pub source_framework: String,
    #[serde(default)]
    pub export_timestamp: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CnnModel {
    pub name: String,
    pub metadata: Metadata,
    input_shape: Vec<usize>,
    layers: Vec<LayerSpec>,
    params: BTreeMap<String, Tensor>,
    /// Output shape of every layer, parallel to `layers`.
    shapes: Vec<Vec<usize>>,
}

impl CnnModel {
    pub fn new(
        name: impl Into<String>,
        input_shape: Vec<usize>,
        layers: Vec<LayerSpec>,
        params: BTreeMap<String, Tensor>,
        metadata: Metadata,
    ) -> Result<Self> {
        let shapes = chain_shapes(&input_shape, &layers, &params)?;
        Ok(CnnModel {
            name: name.into(),
            metadata,
            input_shape,
            layers,
            params,
            shapes,
        })
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn params(&self) -> &BTreeMap<String, Tensor> {
        &self.params
    }

    pub fn output_shape(&self, layer: usize) -> &[usize] {
        &self.shapes[layer]
    }

    pub fn input_shape_of(&self, layer: usize) -> &[usize] {
        if layer == 0 {
            &self.input_shape
        } else {
            &self.shapes[layer - 1]
        }
    }

    /// Parameter tensor bound to `role` on `layer`, if any.
    pub fn param(&self, layer: usize, role: &str) -> Option<&Tensor> {
        self.layers[layer].params.get(role).map(|name| &self.params[name])
    }
}

fn chain_shapes(
    input_shape: &[usize],
    layers: &[LayerSpec],
    params: &BTreeMap<String, Tensor>,
) -> Result<Vec<Vec<usize>>> {
    if input_shape.is_empty() || input_shape.contains(&0) {
        return Err(Error::shape("input", format!("invalid input shape {input_shape:?}")));
    }
    match layers.first() {
        Some(LayerSpec {
            kind: LayerKind::Input, ..
        }) => {}
        _ => return Err(Error::Manifest("first layer must be the Input layer".into())),
    }
    let mut shapes = Vec::with_capacity(layers.len());
    let mut current = input_shape.to_vec();
    for (index, layer) in layers.iter().enumerate() {
        let next = layer_output_shape(index, layer, &current, params).map_err(|e| e.in_layer(index, &layer.name))?;
        shapes.push(next.clone());
        current = next;
    }
    Ok(shapes)
}

fn resolve<'a>(layer: &LayerSpec, params: &'a BTreeMap<String, Tensor>, role: &str) -> Result<Option<&'a Tensor>> {
    match layer.params.get(role) {
        None => Ok(None),
        Some(name) => params
            .get(name)
            .map(Some)
            .ok_or_else(|| Error::MissingBlob(name.clone())),
    }
}

fn expect_shape(layer: &LayerSpec, role: &str, tensor: &Tensor, expected: &[usize]) -> Result<()> {
    if tensor.shape() != expected {
        return Err(Error::shape(
            &layer.name,
            format!("{role} has shape {:?}, expected {expected:?}", tensor.shape()),
        ));
    }
    Ok(())
}

fn layer_output_shape(
    index: usize,
    layer: &LayerSpec,
    input: &[usize],
    params: &BTreeMap<String, Tensor>,
) -> Result<Vec<usize>> {
    let (required, optional) = layer.kind.roles();
    for role in required {
        if !layer.params.contains_key(*role) {
            return Err(Error::Manifest(format!(
                "layer \"{}\" is missing parameter \"{role}\"",
                layer.name
            )));
        }
    }
    if let Some(extra) = layer
        .params
        .keys()
        .find(|k| !required.contains(&k.as_str()) && !optional.contains(&k.as_str()))
    {
        return Err(Error::Manifest(format!(
            "layer \"{}\" has unexpected parameter \"{extra}\"",
            layer.name
        )));
    }
    for role in required.iter().chain(optional) {
        resolve(layer, params, role)?;
    }

    match &layer.kind {
        LayerKind::Input => {
            if index != 0 {
                return Err(Error::Manifest("Input layer may only appear first".into()));
            }
            Ok(input.to_vec())
        }
        LayerKind::Conv2D {
            out_channels,
            kernel_size: [kh, kw],
            stride,
            padding,
        } => {
            let [c, h, w] = *input else {
                return Err(Error::shape(
                    &layer.name,
                    format!("Conv2D needs CxHxW input, got {input:?}"),
                ));
            };
            let oh = conv_output_size(h, *kh, *stride, *padding);
            let ow = conv_output_size(w, *kw, *stride, *padding);
            let (Some(oh), Some(ow)) = (oh, ow) else {
                return Err(Error::shape(
                    &layer.name,
                    format!("kernel {kh}x{kw} stride {stride} padding {padding} does not fit {h}x{w}"),
                ));
            };
            let weight = resolve(layer, params, "weight")?.expect("required");
            expect_shape(layer, "weight", weight, &[*out_channels, c, *kh, *kw])?;
            if let Some(bias) = resolve(layer, params, "bias")? {
                expect_shape(layer, "bias", bias, &[*out_channels])?;
            }
            Ok(vec![*out_channels, oh, ow])
        }
        LayerKind::Dense { units } => {
            let [m] = *input else {
                return Err(Error::shape(
                    &layer.name,
                    format!("Dense needs a flat input, got {input:?}"),
                ));
            };
            let weight = resolve(layer, params, "weight")?.expect("required");
            expect_shape(layer, "weight", weight, &[*units, m])?;
            if let Some(bias) = resolve(layer, params, "bias")? {
                expect_shape(layer, "bias", bias, &[*units])?;
            }
            Ok(vec![*units])
        }
        LayerKind::AvgPool { window, stride } => {
            let [c, h, w] = *input else {
                return Err(Error::shape(
                    &layer.name,
                    format!("AvgPool needs CxHxW input, got {input:?}"),
                ));
            };
            let (oh, ow) = pool_output_shape(h, w, *window, *stride).map_err(|e| match e {
                Error::Shape { detail, .. } => Error::shape(&layer.name, detail),
                other => other,
            })?;
            Ok(vec![c, oh, ow])
        }
        LayerKind::BatchNorm { epsilon } => {
            if !(*epsilon >= 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "BatchNorm epsilon {epsilon} is negative"
                )));
            }
            let channels = input[0];
            for role in ["gamma", "beta", "mean", "variance"] {
                let p = resolve(layer, params, role)?.expect("required");
                expect_shape(layer, role, p, &[channels])?;
            }
            let variance = resolve(layer, params, "variance")?.expect("required");
            if let Some(v) = variance.data().iter().find(|v| !(**v >= 0.0)) {
                return Err(Error::InvalidParameter(format!("BatchNorm variance {v} is negative")));
            }
            Ok(input.to_vec())
        }
        LayerKind::Relu => Ok(input.to_vec()),
        LayerKind::Flatten => Ok(vec![input.iter().product()]),
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ModelManifest {
    format_version: String,
    kind: String,
    name: String,
    input_shape: Vec<usize>,
    #[serde(default)]
    metadata: Metadata,
    layers: Vec<serde_json::Value>,
    tensors: Vec<TensorEntry>,
}

fn parse_layer(value: serde_json::Value) -> Result<LayerSpec> {
    let name = value
        .get("name")
        .and_then(|n| n.as_str())
        .ok_or_else(|| Error::Manifest("layer without a \"name\" field".into()))?
        .to_string();
    let kind = value
        .get("kind")
        .and_then(|k| k.as_str())
        .ok_or_else(|| Error::Manifest(format!("layer \"{name}\" has no \"kind\" field")))?;
    if !KIND_NAMES.contains(&kind) {
        return Err(Error::Unsupported(format!("layer \"{name}\" has kind \"{kind}\"")));
    }
    serde_json::from_value(value).map_err(|e| Error::Manifest(format!("layer \"{name}\": {e}")))
}

/// Loads and fully validates a model container directory.
pub fn load_model(path: impl AsRef<Path>) -> Result<CnnModel> {
    let dir = path.as_ref();
    let manifest: ModelManifest = container::read_manifest(dir)?;
    container::check_version(&manifest.format_version)?;
    if manifest.kind != "cnn" {
        return Err(Error::Manifest(format!(
            "expected kind \"cnn\", found \"{}\"",
            manifest.kind
        )));
    }
    let layers = manifest
        .layers
        .into_iter()
        .map(parse_layer)
        .collect::<Result<Vec<_>>>()?;

    let mut params = BTreeMap::new();
    for layer in &layers {
        for tensor_name in layer.params.values() {
            if params.contains_key(tensor_name) {
                continue;
            }
            let entry = container::find_entry(&manifest.tensors, tensor_name)?;
            params.insert(tensor_name.clone(), container::read_f32(dir, entry)?);
        }
    }
    CnnModel::new(manifest.name, manifest.input_shape, layers, params, manifest.metadata)
}

pub fn save_model(model: &CnnModel, path: impl AsRef<Path>) -> Result<()> {
    let dir = path.as_ref();
    let tensors = model
        .params
        .iter()
        .map(|(name, t)| container::write_f32(dir, name, t))
        .collect::<Result<Vec<_>>>()?;
    let layers = model
        .layers
        .iter()
        .map(|l| serde_json::to_value(l).map_err(|e| Error::Manifest(e.to_string())))
        .collect::<Result<Vec<_>>>()?;
    let manifest = ModelManifest {
        format_version: FORMAT_VERSION.to_string(),
        kind: "cnn".into(),
        name: model.name.clone(),
        input_shape: model.input_shape.clone(),
        metadata: model.metadata.clone(),
        layers,
        tensors,
    };
    container::write_manifest(dir, &manifest)
}
