//! CNN forward pass and the stage view of a model.
//!
//! A *stage* is one synaptic layer (Conv2D, Dense or AvgPool) together with
//! the BatchNorm / ReLU layers that follow it. Stages are the unit of
//! calibration and conversion: stage `n` becomes SNN layer `n`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{CnnModel, LayerKind};
use crate::tensor::{avgpool_forward, batchnorm_forward, conv2d_forward, dense_forward, relu, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum StageOp {
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
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stage {
    /// Index of the synaptic layer in the model's layer list.
    pub layer: usize,
    pub name: String,
    pub op: StageOp,
    pub input_shape: Vec<usize>,
    pub output_shape: Vec<usize>,
    /// Index of a BatchNorm directly following the synaptic layer.
    pub batchnorm: Option<usize>,
    pub relu: bool,
}

/// Groups the model's layers into stages. BatchNorm must directly follow a
/// Conv2D or Dense layer; ReLU must follow some stage.
pub fn stages(model: &CnnModel) -> Result<Vec<Stage>> {
    let mut out: Vec<Stage> = Vec::new();
    let mut prev_kind: Option<&LayerKind> = None;
    for (index, layer) in model.layers().iter().enumerate() {
        let op = match &layer.kind {
            LayerKind::Conv2D {
                out_channels,
                kernel_size,
                stride,
                padding,
            } => Some(StageOp::Conv2D {
                out_channels: *out_channels,
                kernel_size: *kernel_size,
                stride: *stride,
                padding: *padding,
            }),
            LayerKind::Dense { units } => Some(StageOp::Dense { units: *units }),
            LayerKind::AvgPool { window, stride } => Some(StageOp::AvgPool {
                window: *window,
                stride: *stride,
            }),
            LayerKind::BatchNorm { .. } => {
                let follows_parametric = matches!(prev_kind, Some(LayerKind::Conv2D { .. } | LayerKind::Dense { .. }));
                match out.last_mut() {
                    Some(stage) if follows_parametric => stage.batchnorm = Some(index),
                    _ => {
                        return Err(Error::Unsupported(format!(
                            "BatchNorm \"{}\" is not directly preceded by a Conv2D or Dense layer",
                            layer.name
                        )))
                    }
                }
                None
            }
            LayerKind::Relu => {
                match out.last_mut() {
                    Some(stage) => stage.relu = true,
                    None => {
                        return Err(Error::Unsupported(format!(
                            "ReLU \"{}\" precedes every synaptic layer",
                            layer.name
                        )))
                    }
                }
                None
            }
            LayerKind::Input | LayerKind::Flatten => None,
        };
        if let Some(op) = op {
            out.push(Stage {
                layer: index,
                name: layer.name.clone(),
                op,
                input_shape: model.input_shape_of(index).to_vec(),
                output_shape: model.output_shape(index).to_vec(),
                batchnorm: None,
                relu: false,
            });
        }
        prev_kind = Some(&layer.kind);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardPass {
    pub logits: Tensor,
    /// Output of every stage after its ReLU (if any); the last entry equals
    /// `logits`.
    pub activations: Vec<Tensor>,
}

pub fn cnn_forward(model: &CnnModel, input: &Tensor) -> Result<ForwardPass> {
    if input.shape() != model.input_shape() {
        return Err(Error::shape(
            "input",
            format!("got {:?}, model expects {:?}", input.shape(), model.input_shape()),
        ));
    }
    let mut activations = Vec::new();
    let mut current = input.clone();
    let mut in_stage = false;
    for (index, layer) in model.layers().iter().enumerate() {
        if layer.kind.is_linear() && in_stage {
            activations.push(current.clone());
        }
        current = apply_layer(model, index, &current).map_err(|e| e.in_layer(index, &layer.name))?;
        in_stage |= layer.kind.is_linear();
    }
    if in_stage {
        activations.push(current.clone());
    }
    Ok(ForwardPass {
        logits: current,
        activations,
    })
}

fn apply_layer(model: &CnnModel, index: usize, x: &Tensor) -> Result<Tensor> {
    let p = |role: &str| model.param(index, role);
    match &model.layers()[index].kind {
        LayerKind::Input => Ok(x.clone()),
        LayerKind::Conv2D { stride, padding, .. } => {
            conv2d_forward(x, p("weight").expect("validated"), p("bias"), *stride, *padding)
        }
        LayerKind::Dense { .. } => dense_forward(x, p("weight").expect("validated"), p("bias")),
        LayerKind::AvgPool { window, stride } => avgpool_forward(x, *window, *stride),
        LayerKind::BatchNorm { epsilon } => batchnorm_forward(
            x,
            p("gamma").expect("validated"),
            p("beta").expect("validated"),
            p("mean").expect("validated"),
            p("variance").expect("validated"),
            *epsilon,
        ),
        LayerKind::Relu => Ok(relu(x)),
        LayerKind::Flatten => x.clone().reshape(vec![x.len()]),
    }
}
