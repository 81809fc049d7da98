use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::container::{self, TensorEntry, FORMAT_VERSION};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Calibration,
    Test,
}

/// A batch of samples with values in `[0, 1]` and their integer labels.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetBundle {
    inputs: Tensor,
    labels: Vec<u32>,
    pub split: Split,
}

impl DatasetBundle {
    pub fn new(inputs: Tensor, labels: Vec<u32>, split: Split) -> Result<Self> {
        if inputs.shape().len() < 2 {
            return Err(Error::shape(
                "dataset",
                format!("inputs need a batch axis, got {:?}", inputs.shape()),
            ));
        }
        if inputs.shape()[0] != labels.len() {
            return Err(Error::shape(
                "dataset",
                format!("{} samples but {} labels", inputs.shape()[0], labels.len()),
            ));
        }
        if let Some((index, &value)) = inputs
            .data()
            .iter()
            .enumerate()
            .find(|(_, v)| !(0.0..=1.0).contains(*v))
        {
            return Err(Error::OutOfRange { index, value });
        }
        Ok(DatasetBundle { inputs, labels, split })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn sample_shape(&self) -> &[usize] {
        &self.inputs.shape()[1..]
    }

    pub fn inputs(&self) -> &Tensor {
        &self.inputs
    }

    pub fn sample(&self, index: usize) -> Tensor {
        let n: usize = self.sample_shape().iter().product();
        let data = self.inputs.data()[index * n..(index + 1) * n].to_vec();
        Tensor::new(self.sample_shape().to_vec(), data).expect("sample shape is consistent")
    }

    /// First `n` samples, clamped to `1..=len`.
    pub fn take(&self, n: usize) -> DatasetBundle {
        let n = n.clamp(1, self.len());
        let per: usize = self.sample_shape().iter().product();
        let mut shape = self.inputs.shape().to_vec();
        shape[0] = n;
        DatasetBundle {
            inputs: Tensor::new(shape, self.inputs.data()[..n * per].to_vec()).expect("prefix shape"),
            labels: self.labels[..n].to_vec(),
            split: self.split,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct DatasetManifest {
    format_version: String,
    kind: String,
    split: Split,
    sample_shape: Vec<usize>,
    tensors: Vec<TensorEntry>,
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<DatasetBundle> {
    let dir = path.as_ref();
    let manifest: DatasetManifest = container::read_manifest(dir)?;
    container::check_version(&manifest.format_version)?;
    if manifest.kind != "dataset" {
        return Err(Error::Manifest(format!(
            "expected kind \"dataset\", found \"{}\"",
            manifest.kind
        )));
    }
    let inputs = container::read_f32(dir, container::find_entry(&manifest.tensors, "inputs")?)?;
    let labels = container::read_u32(dir, container::find_entry(&manifest.tensors, "labels")?)?;
    if inputs.shape()[1..] != manifest.sample_shape[..] {
        return Err(Error::Manifest(format!(
            "inputs shape {:?} disagrees with sample_shape {:?}",
            inputs.shape(),
            manifest.sample_shape
        )));
    }
    DatasetBundle::new(inputs, labels.into_data(), manifest.split)
}

pub fn save_dataset(bundle: &DatasetBundle, path: impl AsRef<Path>) -> Result<()> {
    let dir = path.as_ref();
    let labels = Tensor::new(vec![bundle.len()], bundle.labels.clone())?;
    let tensors = vec![
        container::write_f32(dir, "inputs", &bundle.inputs)?,
        container::write_u32(dir, "labels", &labels)?,
    ];
    let manifest = DatasetManifest {
        format_version: FORMAT_VERSION.to_string(),
        kind: "dataset".into(),
        split: bundle.split,
        sample_shape: bundle.sample_shape().to_vec(),
        tensors,
    };
    container::write_manifest(dir, &manifest)
}
