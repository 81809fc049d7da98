use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::DatasetBundle;
use crate::error::{Error, Result};
use crate::fold::has_batchnorm;
use crate::forward::{cnn_forward, stages};
use crate::model::CnnModel;

/// Per-stage activation maxima measured on a calibration set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationStats {
    /// `lambdas[0]` is the input scale (always 1); `lambdas[n]` is the
    /// largest output of stage `n` over all neurons and samples.
    pub lambdas: Vec<f32>,
    /// Stage names, parallel to `lambdas[1..]`.
    pub layers: Vec<String>,
    pub sample_count: usize,
    /// Epsilon the model was folded with before calibration.
    pub fold_epsilon: f32,
}

impl CalibrationStats {
    pub fn lambda(&self, n: usize) -> f32 {
        self.lambdas[n]
    }
}

/// Computes `lambda_n = max_i a_i^n` for every stage of a BN-free model.
pub fn calibrate(model: &CnnModel, calib: &DatasetBundle, fold_epsilon: f32) -> Result<CalibrationStats> {
    if has_batchnorm(model) {
        return Err(Error::InvalidParameter("calibration needs a BN-folded model".into()));
    }
    if calib.is_empty() {
        return Err(Error::InvalidParameter("calibration set is empty".into()));
    }
    let stage_list = stages(model)?;
    let maxima = (0..calib.len())
        .into_par_iter()
        .map(|i| {
            let pass = cnn_forward(model, &calib.sample(i))?;
            Ok(pass.activations.iter().map(|a| a.max()).collect::<Vec<f32>>())
        })
        .try_reduce(
            || vec![f32::NEG_INFINITY; stage_list.len()],
            |a, b| Ok(a.iter().zip(&b).map(|(x, y)| x.max(*y)).collect()),
        )?;

    for (stage, lambda) in stage_list.iter().zip(&maxima) {
        if !(*lambda > 0.0) {
            return Err(Error::Degenerate {
                layer: stage.name.clone(),
                detail: format!("maximum activation {lambda} over the calibration set; cannot normalise"),
            });
        }
    }
    let mut lambdas = vec![1.0];
    lambdas.extend(maxima);
    Ok(CalibrationStats {
        lambdas,
        layers: stage_list.into_iter().map(|s| s.name).collect(),
        sample_count: calib.len(),
        fold_epsilon,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Split;
    use crate::model::{LayerKind, LayerSpec, Metadata};
    use crate::tensor::Tensor;
    use std::collections::BTreeMap;

    fn dense(w: f32, b: f32) -> CnnModel {
        let mut params = BTreeMap::new();
        params.insert("w".to_string(), Tensor::new(vec![1, 1], vec![w]).unwrap());
        params.insert("b".to_string(), Tensor::new(vec![1], vec![b]).unwrap());
        CnnModel::new(
            "m",
            vec![1],
            vec![
                LayerSpec::new("input", LayerKind::Input),
                LayerSpec::new("fc", LayerKind::Dense { units: 1 })
                    .with_param("weight", "w")
                    .with_param("bias", "b"),
                LayerSpec::new("relu", LayerKind::Relu),
            ],
            params,
            Metadata::default(),
        )
        .unwrap()
    }

    fn data(values: &[f32]) -> DatasetBundle {
        DatasetBundle::new(
            Tensor::new(vec![values.len(), 1], values.to_vec()).unwrap(),
            vec![0; values.len()],
            Split::Calibration,
        )
        .unwrap()
    }

    #[test]
    fn lambda_is_the_maximum_activation() {
        let stats = calibrate(&dense(1.0, 0.0), &data(&[0.2, 0.7]), 0.0).unwrap();
        assert_eq!(stats.lambdas, vec![1.0, 0.7]);
        assert_eq!(stats.sample_count, 2);
    }

    #[test]
    fn bias_drives_lambda_for_zero_input() {
        let model = dense(3.0, 0.25);
        let expected = cnn_forward(&model, &Tensor::new(vec![1], vec![0.0]).unwrap())
            .unwrap()
            .activations[0]
            .max();
        let stats = calibrate(&model, &data(&[0.0]), 0.0).unwrap();
        assert_eq!(stats.lambdas[1], expected);
    }

    #[test]
    fn all_zero_layer_is_degenerate() {
        let err = calibrate(&dense(-1.0, 0.0), &data(&[0.3, 0.9]), 0.0).unwrap_err();
        assert!(matches!(err, Error::Degenerate { ref layer, .. } if layer == "fc"));
    }
}
